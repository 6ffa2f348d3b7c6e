/**
 * EMB binary format: 12-byte magic "MLP4STREMB1\0", u32 LE record count,
 * u32 LE dimension, then per record a u64 LE post id followed by
 * `dim` f32 LE values.  Writer and reader are bit-exact inverses.
 */

export const EMB_MAGIC = Buffer.from("MLP4STREMB1\0", "latin1");

export interface EmbRecord {
  id: number;
  vector: Float32Array;
}

export function encodeEmb(records: EmbRecord[], dim: number): Buffer {
  for (const rec of records) {
    if (rec.vector.length !== dim) {
      throw new Error(
        `record ${rec.id}: vector length ${rec.vector.length} != dim ${dim}`,
      );
    }
    if (!Number.isInteger(rec.id) || rec.id < 0) {
      throw new Error(`record id must be a non-negative integer, got ${rec.id}`);
    }
  }
  const recordSize = 8 + 4 * dim;
  const buf = Buffer.alloc(EMB_MAGIC.length + 8 + records.length * recordSize);
  EMB_MAGIC.copy(buf, 0);
  buf.writeUInt32LE(records.length, EMB_MAGIC.length);
  buf.writeUInt32LE(dim, EMB_MAGIC.length + 4);
  let offset = EMB_MAGIC.length + 8;
  for (const rec of records) {
    buf.writeBigUInt64LE(BigInt(rec.id), offset);
    offset += 8;
    for (let j = 0; j < dim; j++) {
      buf.writeFloatLE(rec.vector[j], offset);
      offset += 4;
    }
  }
  return buf;
}

export function decodeEmb(buf: Buffer): { dim: number; records: EmbRecord[] } {
  if (
    buf.length < EMB_MAGIC.length + 8 ||
    !buf.subarray(0, EMB_MAGIC.length).equals(EMB_MAGIC)
  ) {
    throw new Error("not an EMB file (bad magic or truncated header)");
  }
  const count = buf.readUInt32LE(EMB_MAGIC.length);
  const dim = buf.readUInt32LE(EMB_MAGIC.length + 4);
  const recordSize = 8 + 4 * dim;
  const expected = EMB_MAGIC.length + 8 + count * recordSize;
  if (buf.length !== expected) {
    throw new Error(
      `EMB file has ${buf.length} bytes, expected ${expected} for ${count} records of dim ${dim}`,
    );
  }
  const records: EmbRecord[] = [];
  let offset = EMB_MAGIC.length + 8;
  for (let i = 0; i < count; i++) {
    const id = Number(buf.readBigUInt64LE(offset));
    offset += 8;
    const vector = new Float32Array(dim);
    for (let j = 0; j < dim; j++) {
      vector[j] = buf.readFloatLE(offset);
      offset += 4;
    }
    records.push({ id, vector });
  }
  return { dim, records };
}
