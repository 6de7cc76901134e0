/**
 * Dataset manifest: one JSON file at the dataset root describing every
 * object instance (its image, bounding box, pose, and raw keypoint/part
 * annotations in original-image pixel coordinates).
 */

import * as fs from 'fs'
import * as path from 'path'

export interface BBox {
  x: number
  y: number
  w: number
  h: number
}

export interface RawKeypoint {
  label: string
  x: number
  y: number
  /** present for part-box annotations */
  w?: number
  h?: number
}

export interface DatasetImage {
  id: string
  /** image file path relative to the dataset root */
  path: string
  split: 'train' | 'val'
  bbox: BBox
  azimuthDeg?: number
  keypoints: RawKeypoint[]
}

export interface DatasetManifest {
  objectClass: string
  images: DatasetImage[]
}

function fail(msg: string): never {
  throw new Error(`dataset manifest: ${msg}`)
}

export function loadDatasetManifest(manifestPath: string): DatasetManifest {
  const raw = JSON.parse(fs.readFileSync(manifestPath, 'utf-8'))
  if (typeof raw.object_class !== 'string') fail('missing object_class')
  if (!Array.isArray(raw.images)) fail('missing images array')
  const images: DatasetImage[] = raw.images.map((im: any, k: number) => {
    for (const field of ['id', 'path', 'split', 'bbox']) {
      if (im[field] === undefined) fail(`images[${k}] missing ${field}`)
    }
    if (im.split !== 'train' && im.split !== 'val') {
      fail(`images[${k}].split must be train or val`)
    }
    const b = im.bbox
    if (!(b.w > 0 && b.h > 0)) fail(`images[${k}].bbox must have w, h > 0`)
    if (/\s/.test(im.id)) fail(`images[${k}].id may not contain whitespace`)
    return {
      id: im.id,
      path: im.path,
      split: im.split,
      bbox: { x: b.x, y: b.y, w: b.w, h: b.h },
      azimuthDeg: im.azimuth_deg,
      keypoints: (im.keypoints ?? []).map((kp: any) => ({
        label: kp.label, x: kp.x, y: kp.y, w: kp.w, h: kp.h,
      })),
    }
  })
  return { objectClass: raw.object_class, images }
}

export function resolveImagePath(root: string, image: DatasetImage): string {
  return path.resolve(root, image.path)
}

/** Scale factor of the resized crop: short side becomes exactly 224 px. */
export function cropScale(bbox: BBox): number {
  return 224 / Math.min(bbox.w, bbox.h)
}

export function cropSize(bbox: BBox): { width: number; height: number } {
  const s = cropScale(bbox)
  // the short side lands on 224 exactly; the long side rounds
  return { width: Math.round(bbox.w * s), height: Math.round(bbox.h * s) }
}

/** Original-image coordinates -> resized-crop frame. */
export function toCropFrame(bbox: BBox, x: number, y: number
                            ): { x: number; y: number } {
  const s = cropScale(bbox)
  return { x: (x - bbox.x) * s, y: (y - bbox.y) * s }
}

/** Resized-crop frame -> original-image coordinates. */
export function toOriginalFrame(bbox: BBox, x: number, y: number
                                ): { x: number; y: number } {
  const s = cropScale(bbox)
  return { x: x / s + bbox.x, y: y / s + bbox.y }
}
