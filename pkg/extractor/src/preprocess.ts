/**
 * Image preprocessing: decode PNG, crop to the object bounding box, resize
 * so the short side is exactly 224 px (bilinear, aspect preserved), then
 * apply the caffe-style VGG normalization (RGB -> BGR, ImageNet channel
 * means subtracted). With random-weight models the normalization is inert
 * but keeps the pipeline identical to a real pretrained run.
 */

import * as fs from 'fs'

import * as tf from '@tensorflow/tfjs'
import { PNG } from 'pngjs'

import { BBox, cropSize } from './dataset'

const BGR_MEAN = [103.939, 116.779, 123.68]

export interface DecodedImage {
  width: number
  height: number
  /** RGB, row-major, length width*height*3 */
  rgb: Float32Array
}

export function decodePng(filePath: string): DecodedImage {
  const png = PNG.sync.read(fs.readFileSync(filePath))
  const n = png.width * png.height
  const rgb = new Float32Array(n * 3)
  for (let i = 0; i < n; i++) {
    rgb[3 * i] = png.data[4 * i]
    rgb[3 * i + 1] = png.data[4 * i + 1]
    rgb[3 * i + 2] = png.data[4 * i + 2]
  }
  return { width: png.width, height: png.height, rgb }
}

/** Crop + resize + normalize; returns a float32 [h, w, 3] tensor. */
export function preprocessCrop(image: DecodedImage, bbox: BBox): tf.Tensor3D {
  const x0 = Math.max(0, Math.round(bbox.x))
  const y0 = Math.max(0, Math.round(bbox.y))
  const x1 = Math.min(image.width, Math.round(bbox.x + bbox.w))
  const y1 = Math.min(image.height, Math.round(bbox.y + bbox.h))
  if (x1 <= x0 || y1 <= y0) {
    throw new Error(`bounding box ${JSON.stringify(bbox)} outside the image`)
  }
  const target = cropSize(bbox)
  return tf.tidy(() => {
    const full = tf.tensor3d(image.rgb, [image.height, image.width, 3])
    const crop = full.slice([y0, x0, 0], [y1 - y0, x1 - x0, 3])
    const resized = tf.image.resizeBilinear(
      crop as tf.Tensor3D, [target.height, target.width], false)
    const bgr = tf.reverse(resized, -1)
    return bgr.sub(tf.tensor1d(BGR_MEAN)) as tf.Tensor3D
  })
}
