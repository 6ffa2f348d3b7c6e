/**
 * Deterministic fixed-weight contextual text encoder.
 *
 * The pipeline mirrors a contextual sentence encoder: tokenize, wrap the
 * sequence in [CLS]/[SEP], look up per-token vectors, add positional
 * signals, mix each position with its masked neighborhood through a
 * fixed projection, then mean-pool the content positions (special and
 * padding positions are excluded from the pool).
 *
 * All weights derive from a fixed seed, so the encoder behaves like a
 * frozen pretrained model: the same text always yields the same vector,
 * bit for bit, regardless of how sequences are grouped into batches.
 */

const GLOBAL_SEED = 0x5eed1e57;
const PAD = "";
const CLS = "[CLS]";
const SEP = "[SEP]";

/** Neighborhood kernel; entry k weights positions at distance k. */
const WINDOW = [0.4, 0.2, 0.1];

export function tokenize(text: string): string[] {
  return text.toLowerCase().split(/[^0-9a-z]+/).filter((t) => t.length > 0);
}

function fnv1a(text: string): number {
  let hash = 0x811c9dc5;
  for (let i = 0; i < text.length; i++) {
    hash ^= text.charCodeAt(i);
    hash = Math.imul(hash, 0x01000193);
  }
  return hash >>> 0;
}

/** splitmix32: tiny deterministic PRNG used to materialize fixed weights. */
function splitmix32(seed: number): () => number {
  let state = seed >>> 0;
  return () => {
    state = (state + 0x9e3779b9) >>> 0;
    let z = state;
    z ^= z >>> 16;
    z = Math.imul(z, 0x21f0aaad);
    z ^= z >>> 15;
    z = Math.imul(z, 0x735a2d97);
    z ^= z >>> 15;
    return (z >>> 0) / 0x100000000;
  };
}

export class ContextualEncoder {
  readonly dim: number;
  readonly maxLen: number;
  private readonly projection: Float64Array; // dim x dim, fixed
  private readonly tokenCache = new Map<string, Float64Array>();

  constructor(dim = 256, maxLen = 256) {
    if (dim < 1 || maxLen < 3) {
      throw new Error(`invalid encoder shape: dim=${dim} maxLen=${maxLen}`);
    }
    this.dim = dim;
    this.maxLen = maxLen;
    const draw = splitmix32(GLOBAL_SEED ^ dim);
    this.projection = new Float64Array(dim * dim);
    const scale = 1.0 / Math.sqrt(dim);
    for (let i = 0; i < this.projection.length; i++) {
      this.projection[i] = (draw() - 0.5) * 2 * scale;
    }
  }

  private tokenVector(token: string): Float64Array {
    let vec = this.tokenCache.get(token);
    if (vec === undefined) {
      vec = new Float64Array(this.dim);
      const draw = splitmix32(fnv1a(token) ^ GLOBAL_SEED);
      const scale = 1.0 / Math.sqrt(this.dim);
      for (let j = 0; j < this.dim; j++) {
        vec[j] = (draw() - 0.5) * 2 * scale;
      }
      this.tokenCache.set(token, vec);
    }
    return vec;
  }

  /** Token sequence after wrapping and truncation to maxLen. */
  prepare(text: string): { tokens: string[]; truncated: boolean } {
    const words = tokenize(text);
    const budget = this.maxLen - 2; // the two special positions
    const truncated = words.length > budget;
    return { tokens: [CLS, ...words.slice(0, budget), SEP], truncated };
  }

  /**
   * Encode a batch of texts as one rectangular (padded, masked) block.
   * Padding never leaks into neighborhood mixing or the mean pool, so
   * the result for each text is independent of its batch mates.
   */
  encodeBatch(texts: string[]): Float32Array[] {
    const prepared = texts.map((t) => this.prepare(t).tokens);
    const width = Math.max(0, ...prepared.map((p) => p.length));
    const n = texts.length;
    const dim = this.dim;

    // Embedding block with PAD rows left at zero.
    const emb = new Float64Array(n * width * dim);
    const isContent = new Uint8Array(n * width);
    const isReal = new Uint8Array(n * width);
    for (let b = 0; b < n; b++) {
      const tokens = prepared[b];
      for (let pos = 0; pos < tokens.length; pos++) {
        const token = tokens[pos];
        const base = (b * width + pos) * dim;
        const tv = this.tokenVector(token);
        for (let j = 0; j < dim; j++) {
          // sinusoidal positional signal keeps the mixing order-aware
          emb[base + j] =
            tv[j] + 0.05 * Math.sin((pos + 1) / Math.pow(10000, (2 * j) / dim));
        }
        isReal[b * width + pos] = 1;
        if (token !== CLS && token !== SEP && token !== PAD) {
          isContent[b * width + pos] = 1;
        }
      }
    }

    // Masked neighborhood mixing + fixed projection, with a residual.
    const mixed = new Float64Array(n * width * dim);
    const ctx = new Float64Array(dim);
    for (let b = 0; b < n; b++) {
      for (let pos = 0; pos < width; pos++) {
        if (!isReal[b * width + pos]) continue;
        ctx.fill(0);
        let totalWeight = 0;
        for (let offset = -(WINDOW.length - 1); offset < WINDOW.length; offset++) {
          const neighbor = pos + offset;
          if (neighbor < 0 || neighbor >= width) continue;
          if (!isReal[b * width + neighbor]) continue;
          const w = WINDOW[Math.abs(offset)];
          totalWeight += w;
          const base = (b * width + neighbor) * dim;
          for (let j = 0; j < dim; j++) {
            ctx[j] += w * emb[base + j];
          }
        }
        for (let j = 0; j < dim; j++) {
          ctx[j] /= totalWeight;
        }
        const base = (b * width + pos) * dim;
        for (let i = 0; i < dim; i++) {
          let dot = 0;
          for (let j = 0; j < dim; j++) {
            dot += this.projection[i * dim + j] * ctx[j];
          }
          mixed[base + i] = emb[base + i] + Math.tanh(dot);
        }
      }
    }

    // Mean-pool content positions only.
    const out: Float32Array[] = [];
    for (let b = 0; b < n; b++) {
      const pooled = new Float64Array(dim);
      let count = 0;
      for (let pos = 0; pos < width; pos++) {
        if (!isContent[b * width + pos]) continue;
        count += 1;
        const base = (b * width + pos) * dim;
        for (let j = 0; j < dim; j++) {
          pooled[j] += mixed[base + j];
        }
      }
      const vec = new Float32Array(dim);
      if (count > 0) {
        for (let j = 0; j < dim; j++) {
          vec[j] = Math.fround(pooled[j] / count);
        }
      }
      out.push(vec);
    }
    return out;
  }
}
