import * as fs from 'fs'
import * as path from 'path'

import { describe, expect, it } from 'vitest'

import { VGG16_LAYERS } from '../src/layers'
import { encodeFeatureTensor, readFeatureFile, writeFeatureFile }
  from '../src/vcft'
import { azimuthToBin } from '../src/viewpoint'
import { primaryReadFeature, tempDir } from './helpers'

function sampleTensor(w = 3, h = 2) {
  const layer = { name: 'pool4', channels: 512, stride: 16, rfSize: 100 }
  const data = new Float32Array(w * h * layer.channels)
  for (let i = 0; i < data.length; i++) data[i] = Math.sin(i) * 4
  return {
    layer, width: w, height: h, data,
    meta: {
      imageId: 'imX', objectClass: 'car', cropWidth: w * 16,
      cropHeight: h * 16, viewpointBin: 'rear-side',
      sourcePath: 'a/b.png',
    },
  }
}

describe('vcft format', () => {
  it('round-trips through our reader', () => {
    const t = sampleTensor()
    const p = path.join(tempDir('cfx-fmt-'), 'x.vcft')
    writeFeatureFile(t, p)
    const back = readFeatureFile(p)
    expect(back.width).toBe(t.width)
    expect(back.height).toBe(t.height)
    expect(back.layer).toEqual(t.layer)
    expect(back.meta).toEqual(t.meta)
    expect(Array.from(back.data)).toEqual(Array.from(t.data))
  })

  it('is byte-stable under rewrite', () => {
    const t = sampleTensor()
    const dir = tempDir('cfx-fmt-')
    const p1 = path.join(dir, 'a.vcft')
    const p2 = path.join(dir, 'b.vcft')
    writeFeatureFile(t, p1)
    writeFeatureFile(readFeatureFile(p1), p2)
    expect(fs.readFileSync(p1).equals(fs.readFileSync(p2))).toBe(true)
  })

  it('matches the primary reader field for field', () => {
    const t = sampleTensor(4, 3)
    const p = path.join(tempDir('cfx-fmt-'), 'x.vcft')
    writeFeatureFile(t, p)
    const parsed = primaryReadFeature(p)
    expect(parsed.image_id).toBe('imX')
    expect(parsed.layer).toBe('pool4')
    expect([parsed.h, parsed.w, parsed.c]).toEqual([3, 4, 512])
    expect([parsed.stride, parsed.rf]).toEqual([16, 100])
    expect(parsed.bin).toBe('rear-side')
    expect(parsed.src).toBe('a/b.png')
  })

  it('rejects non-finite values', () => {
    const t = sampleTensor()
    t.data[7] = NaN
    expect(() => encodeFeatureTensor(t)).toThrow(/non-finite/)
  })

  it('ships the pinned layer geometry', () => {
    expect(VGG16_LAYERS.pool3).toEqual(
      { name: 'pool3', channels: 256, stride: 8, rfSize: 44 })
    expect(VGG16_LAYERS.pool4).toEqual(
      { name: 'pool4', channels: 512, stride: 16, rfSize: 100 })
    expect(VGG16_LAYERS.pool5).toEqual(
      { name: 'pool5', channels: 512, stride: 32, rfSize: 212 })
  })
})

describe('viewpoint binning', () => {
  it('covers the five bins symmetrically', () => {
    expect(azimuthToBin(0)).toBe('front')
    expect(azimuthToBin(35.9)).toBe('front')
    expect(azimuthToBin(-35.9)).toBe('front')
    expect(azimuthToBin(36)).toBe('front-side')
    expect(azimuthToBin(324.1)).toBe('front')
    expect(azimuthToBin(300)).toBe('front-side')
    expect(azimuthToBin(90)).toBe('side')
    expect(azimuthToBin(270)).toBe('side')
    expect(azimuthToBin(130)).toBe('rear-side')
    expect(azimuthToBin(180)).toBe('rear')
    expect(azimuthToBin(150)).toBe('rear')
    expect(azimuthToBin(null)).toBe('unknown')
    expect(azimuthToBin(Number.NaN)).toBe('unknown')
  })

  it('each named bin covers 72 degrees of the circle', () => {
    const counts: Record<string, number> = {}
    for (let a = 0; a < 360; a++) {
      const b = azimuthToBin(a + 0.5)
      counts[b] = (counts[b] ?? 0) + 1
    }
    expect(counts).toEqual({
      front: 72, 'front-side': 72, side: 72, 'rear-side': 72, rear: 72,
    })
  })
})
