#!/usr/bin/env node
/**
 * embed-export --corpus DIR --out FILE [--dim N] [--max-len N] [--batch-size N]
 *
 * Encodes every post of a corpus directory with the built-in deterministic
 * contextual encoder and writes the EMB binary file the trainer's
 * precomputed-embedding mode loads.
 */

import { DEFAULT_JOB, runExport } from "./export";

function usage(): never {
  process.stderr.write(
    "usage: embed-export --corpus DIR --out FILE [--dim N] [--max-len N] [--batch-size N]\n",
  );
  process.exit(1);
}

function parseArgs(argv: string[]) {
  const opts: Record<string, string> = {};
  for (let i = 0; i < argv.length; i += 2) {
    const key = argv[i];
    const value = argv[i + 1];
    if (!key.startsWith("--") || value === undefined) usage();
    opts[key.slice(2)] = value;
  }
  if (!opts["corpus"] || !opts["out"]) usage();
  const num = (name: string, fallback: number) => {
    if (!(name in opts)) return fallback;
    const parsed = Number(opts[name]);
    if (!Number.isInteger(parsed) || parsed < 1) {
      process.stderr.write(`--${name} must be a positive integer\n`);
      process.exit(1);
    }
    return parsed;
  };
  return {
    corpusDir: opts["corpus"],
    outPath: opts["out"],
    dim: num("dim", DEFAULT_JOB.dim),
    maxLen: num("max-len", DEFAULT_JOB.maxLen),
    batchSize: num("batch-size", DEFAULT_JOB.batchSize),
  };
}

function main(): number {
  try {
    const job = parseArgs(process.argv.slice(2));
    const result = runExport(job);
    process.stderr.write(
      `wrote ${result.count} embeddings of dim ${result.dim} to ${job.outPath}` +
        ` (${result.truncated} posts truncated)\n`,
    );
    return 0;
  } catch (err) {
    process.stderr.write(`error: ${err instanceof Error ? err.message : err}\n`);
    return 1;
  }
}

process.exit(main());
