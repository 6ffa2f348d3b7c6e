/**
 * Export job: encode every corpus post and write one EMB file.
 */

import * as fs from "node:fs";

import { readCorpusPosts } from "./corpus";
import { encodeEmb, EmbRecord } from "./emb";
import { ContextualEncoder } from "./encoder";

export interface ExportJob {
  corpusDir: string;
  outPath: string;
  dim: number;
  maxLen: number;
  batchSize: number;
}

export interface ExportResult {
  count: number;
  dim: number;
  truncated: number;
}

export const DEFAULT_JOB = { dim: 256, maxLen: 256, batchSize: 32 };

export function runExport(job: ExportJob): ExportResult {
  if (job.batchSize < 1) {
    throw new Error(`batch size must be >= 1, got ${job.batchSize}`);
  }
  const posts = readCorpusPosts(job.corpusDir);
  const encoder = new ContextualEncoder(job.dim, job.maxLen);

  let truncated = 0;
  for (const post of posts) {
    if (encoder.prepare(post.text).truncated) truncated += 1;
  }

  const records: EmbRecord[] = [];
  for (let start = 0; start < posts.length; start += job.batchSize) {
    const batch = posts.slice(start, start + job.batchSize);
    const vectors = encoder.encodeBatch(batch.map((p) => p.text));
    for (let i = 0; i < batch.length; i++) {
      records.push({ id: batch[i].id, vector: vectors[i] });
    }
  }

  fs.writeFileSync(job.outPath, encodeEmb(records, encoder.dim));
  return { count: records.length, dim: encoder.dim, truncated };
}
