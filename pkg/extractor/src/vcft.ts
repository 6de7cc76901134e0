/**
 * Writer (and validating reader) for the binary feature-tensor interchange
 * format consumed by the conceptforge toolkit.
 *
 * Layout: 8-byte magic "VCFT0001", little-endian u32 {width, height,
 * channels, meta_length}, UTF-8 key=value metadata lines, then
 * width*height*channels little-endian float32 in row-major (y, x, channel)
 * order.
 */

import * as fs from 'fs'

import { LayerSpec } from './layers'

const MAGIC = Buffer.from('VCFT0001', 'ascii')
const HEADER_SIZE = MAGIC.length + 16

export interface ImageMeta {
  imageId: string
  objectClass: string
  cropWidth: number
  cropHeight: number
  viewpointBin: string
  sourcePath?: string
}

export interface FeatureTensor {
  layer: LayerSpec
  width: number
  height: number
  /** length width*height*channels, (y, x, channel) order */
  data: Float32Array
  meta: ImageMeta
}

function metaText(t: FeatureTensor): string {
  const lines = [
    `image_id=${t.meta.imageId}`,
    `layer=${t.layer.name}`,
    `layer_stride=${t.layer.stride}`,
    `layer_rf_size=${t.layer.rfSize}`,
    `object_class=${t.meta.objectClass}`,
    `crop_width=${t.meta.cropWidth}`,
    `crop_height=${t.meta.cropHeight}`,
    `viewpoint_bin=${t.meta.viewpointBin}`,
  ]
  if (t.meta.sourcePath !== undefined) {
    lines.push(`source_path=${t.meta.sourcePath}`)
  }
  return lines.join('\n') + '\n'
}

export function encodeFeatureTensor(t: FeatureTensor): Buffer {
  const n = t.width * t.height * t.layer.channels
  if (t.data.length !== n) {
    throw new Error(
      `data length ${t.data.length} != ${t.width}x${t.height}x` +
      `${t.layer.channels}`)
  }
  for (let i = 0; i < t.data.length; i++) {
    if (!Number.isFinite(t.data[i])) {
      throw new Error(`non-finite value at flat index ${i}`)
    }
  }
  const meta = Buffer.from(metaText(t), 'utf-8')
  const header = Buffer.alloc(HEADER_SIZE)
  MAGIC.copy(header, 0)
  header.writeUInt32LE(t.width, 8)
  header.writeUInt32LE(t.height, 12)
  header.writeUInt32LE(t.layer.channels, 16)
  header.writeUInt32LE(meta.length, 20)
  const payload = Buffer.alloc(4 * n)
  for (let i = 0; i < n; i++) {
    payload.writeFloatLE(t.data[i], 4 * i)
  }
  return Buffer.concat([header, meta, payload])
}

export function writeFeatureFile(t: FeatureTensor, path: string): void {
  fs.writeFileSync(path, encodeFeatureTensor(t))
}

/** Validating reader, used by tests and the idempotency check. */
export function readFeatureFile(path: string): FeatureTensor {
  const blob = fs.readFileSync(path)
  if (!blob.subarray(0, 8).equals(MAGIC)) {
    throw new Error(`bad magic in ${path} (byte offset 0)`)
  }
  const width = blob.readUInt32LE(8)
  const height = blob.readUInt32LE(12)
  const channels = blob.readUInt32LE(16)
  const metaLen = blob.readUInt32LE(20)
  const dataStart = HEADER_SIZE + metaLen
  const n = width * height * channels
  if (blob.length < dataStart + 4 * n) {
    throw new Error(`truncated payload in ${path} (byte offset ${blob.length})`)
  }
  const meta: Record<string, string> = {}
  for (const line of blob.subarray(HEADER_SIZE, dataStart)
      .toString('utf-8').split('\n')) {
    const eq = line.indexOf('=')
    if (eq > 0) meta[line.slice(0, eq)] = line.slice(eq + 1)
  }
  const data = new Float32Array(n)
  for (let i = 0; i < n; i++) {
    data[i] = blob.readFloatLE(dataStart + 4 * i)
    if (!Number.isFinite(data[i])) {
      throw new Error(
        `non-finite float in ${path} (byte offset ${dataStart + 4 * i})`)
    }
  }
  return {
    layer: {
      name: meta['layer'] ?? 'unknown',
      channels,
      stride: parseInt(meta['layer_stride'] ?? '1', 10),
      rfSize: parseInt(meta['layer_rf_size'] ?? '2', 10),
    },
    width,
    height,
    data,
    meta: {
      imageId: meta['image_id'] ?? 'unknown',
      objectClass: meta['object_class'] ?? 'unknown',
      cropWidth: parseInt(meta['crop_width'] ?? '0', 10),
      cropHeight: parseInt(meta['crop_height'] ?? '0', 10),
      viewpointBin: meta['viewpoint_bin'] ?? 'unknown',
      sourcePath: meta['source_path'],
    },
  }
}
