/**
 * Annotation conversion: raw dataset keypoints/part boxes (original-image
 * pixels) to the corpus annotation format in the resized-crop frame, with
 * left/right label merging via a user-editable merge map.
 *
 * Keypoints landing outside the object bounding box are kept but flagged
 * (clipping is an evaluation decision, not an ingestion one).
 */

import * as fs from 'fs'

import { DatasetImage, cropScale, loadDatasetManifest, toCropFrame }
  from './dataset'
import { azimuthToBin } from './viewpoint'

export const DISCARD = 'DISCARD'

export interface ConvertedInstance {
  imageId: string
  partId: string
  x: number
  y: number
  w?: number
  h?: number
  viewpointBin: string
}

export interface ConversionResult {
  instances: ConvertedInstance[]
  /** keypoints whose original position lies outside the bounding box */
  outsideBox: Array<{ imageId: string; label: string }>
  discarded: number
}

export function loadMergeMap(mapPath: string): Map<string, string> {
  const out = new Map<string, string>()
  const lines = fs.readFileSync(mapPath, 'utf-8').split('\n')
  lines.forEach((line, idx) => {
    const text = line.trim()
    if (!text || text.startsWith('#')) return
    const arrow = text.indexOf('->')
    if (arrow < 1) {
      throw new Error(
        `${mapPath}:${idx + 1}: expected 'raw_label -> merged_part_id'`)
    }
    out.set(text.slice(0, arrow).trim(), text.slice(arrow + 2).trim())
  })
  return out
}

export function convertAnnotations(manifestPath: string,
                                   mergeMap: Map<string, string> | null,
                                   split?: 'train' | 'val'
                                   ): ConversionResult {
  const dataset = loadDatasetManifest(manifestPath)
  const instances: ConvertedInstance[] = []
  const outsideBox: Array<{ imageId: string; label: string }> = []
  const unknown = new Set<string>()
  let discarded = 0

  for (const image of dataset.images) {
    if (split && image.split !== split) continue
    const bin = azimuthToBin(image.azimuthDeg)
    const scale = cropScale(image.bbox)
    for (const kp of image.keypoints) {
      let partId = kp.label
      if (mergeMap) {
        const mapped = mergeMap.get(kp.label)
        if (mapped === undefined) {
          unknown.add(kp.label)
          continue
        }
        if (mapped === DISCARD) {
          discarded++
          continue
        }
        partId = mapped
      }
      const inBox = kp.x >= image.bbox.x && kp.x <= image.bbox.x + image.bbox.w
        && kp.y >= image.bbox.y && kp.y <= image.bbox.y + image.bbox.h
      if (!inBox) outsideBox.push({ imageId: image.id, label: kp.label })
      const pos = toCropFrame(image.bbox, kp.x, kp.y)
      instances.push({
        imageId: image.id,
        partId,
        x: pos.x,
        y: pos.y,
        w: kp.w !== undefined ? kp.w * scale : undefined,
        h: kp.h !== undefined ? kp.h * scale : undefined,
        viewpointBin: bin,
      })
    }
  }
  if (unknown.size) {
    throw new Error(
      'raw labels missing from merge map: ' + [...unknown].sort().join(', '))
  }
  return { instances, outsideBox, discarded }
}

/** %.9g-style float formatting (matches the consumer's writer). */
function g9(value: number): string {
  if (Number.isInteger(value) && Math.abs(value) < 1e15) {
    return value.toString()
  }
  return String(parseFloat(value.toPrecision(9)))
}

export function writeAnnotationFile(result: ConversionResult,
                                    outPath: string): void {
  const lines: string[] = []
  if (result.outsideBox.length) {
    lines.push(`# outside_box=${result.outsideBox.length}`)
  }
  for (const inst of result.instances) {
    const fields = [inst.imageId, inst.partId, g9(inst.x), g9(inst.y)]
    if (inst.w !== undefined && inst.h !== undefined) {
      fields.push(g9(inst.w), g9(inst.h))
    }
    fields.push(inst.viewpointBin)
    lines.push(fields.join(' '))
  }
  fs.writeFileSync(outPath, lines.join('\n') + '\n')
}
