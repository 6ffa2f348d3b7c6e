/**
 * Read posts out of a corpus directory produced by the training pipeline.
 * Only `posts.jsonl` is consumed; each line carries the post id and the
 * cleaned title+body text to encode.
 */

import * as fs from "node:fs";
import * as path from "node:path";

export interface CorpusPost {
  id: number;
  text: string;
}

export function readCorpusPosts(corpusDir: string): CorpusPost[] {
  const file = path.join(corpusDir, "posts.jsonl");
  if (!fs.existsSync(file)) {
    throw new Error(`not a corpus directory (missing posts.jsonl): ${corpusDir}`);
  }
  const posts: CorpusPost[] = [];
  const lines = fs.readFileSync(file, "utf-8").split("\n");
  for (const line of lines) {
    const trimmed = line.trim();
    if (!trimmed) continue;
    const obj = JSON.parse(trimmed);
    if (typeof obj.id !== "number") {
      throw new Error(`posts.jsonl line without a numeric id: ${trimmed.slice(0, 80)}`);
    }
    posts.push({ id: obj.id, text: typeof obj.text === "string" ? obj.text : "" });
  }
  return posts;
}
