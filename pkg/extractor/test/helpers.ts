import { execFileSync } from 'child_process'
import * as fs from 'fs'
import * as os from 'os'
import * as path from 'path'

import { PNG } from 'pngjs'

export function tempDir(prefix: string): string {
  return fs.mkdtempSync(path.join(os.tmpdir(), prefix))
}

export function writePng(filePath: string, width: number, height: number,
                         seed = 1): void {
  const png = new PNG({ width, height })
  let state = seed >>> 0
  const next = () => {
    // xorshift32: deterministic pixel noise without a dependency
    state ^= state << 13; state >>>= 0
    state ^= state >> 17
    state ^= state << 5; state >>>= 0
    return state
  }
  for (let i = 0; i < width * height; i++) {
    const v = next()
    png.data[4 * i] = v & 0xff
    png.data[4 * i + 1] = (v >> 8) & 0xff
    png.data[4 * i + 2] = (v >> 16) & 0xff
    png.data[4 * i + 3] = 255
  }
  fs.writeFileSync(filePath, PNG.sync.write(png))
}

export interface Fixture {
  root: string
  manifestPath: string
}

/**
 * Two-image dataset: bboxes chosen so the resized crop short side is
 * exactly 224; keypoints cover the merge/discard/outside-box cases.
 */
export function makeDataset(): Fixture {
  const root = tempDir('cfx-dataset-')
  fs.mkdirSync(path.join(root, 'images'))
  writePng(path.join(root, 'images', 'car_a.png'), 300, 260, 11)
  writePng(path.join(root, 'images', 'car_b.png'), 280, 300, 22)
  const manifest = {
    object_class: 'car',
    images: [
      {
        id: 'car_a',
        path: 'images/car_a.png',
        split: 'train',
        bbox: { x: 40, y: 30, w: 150, h: 130 },
        azimuth_deg: 10,
        keypoints: [
          { label: 'L-headlight', x: 40, y: 30 },  // bbox corner -> (0, 0)
          { label: 'R-headlight', x: 115, y: 95 },
          { label: 'tail-rotor', x: 100, y: 100 },  // DISCARD-mapped
          { label: 'windshield', x: 90, y: 60, w: 52, h: 26 },
        ],
      },
      {
        id: 'car_b',
        path: 'images/car_b.png',
        split: 'val',
        bbox: { x: 20, y: 50, w: 112, h: 224 },
        azimuth_deg: 95,
        keypoints: [
          { label: 'L-headlight', x: 76, y: 160 },
          { label: 'seat', x: 10, y: 40 },  // outside the bbox
        ],
      },
    ],
  }
  const manifestPath = path.join(root, 'dataset.json')
  fs.writeFileSync(manifestPath, JSON.stringify(manifest, null, 2))
  return { root, manifestPath }
}

export function writeMergeMap(dir: string): string {
  const mapPath = path.join(dir, 'merge.txt')
  fs.writeFileSync(mapPath, [
    '# car merge rules',
    'L-headlight -> headlight',
    'R-headlight -> headlight',
    'windshield -> windshield',
    'seat -> seat',
    'tail-rotor -> DISCARD',
    '',
  ].join('\n'))
  return mapPath
}

/** Validate a VCFT file with the primary (Python) implementation. */
export function primaryReadFeature(filePath: string): any {
  const script = [
    'import json, sys',
    'from conceptforge.corpus import read_feature_file',
    't = read_feature_file(sys.argv[1])',
    'print(json.dumps({"image_id": t.image_id, "layer": t.layer.name,',
    '  "w": t.width, "h": t.height, "c": t.layer.channels,',
    '  "stride": t.layer.stride, "rf": t.layer.rf_size,',
    '  "crop_w": t.meta.crop_width, "crop_h": t.meta.crop_height,',
    '  "bin": t.meta.viewpoint_bin, "cls": t.meta.object_class,',
    '  "src": t.meta.source_path}))',
  ].join('\n')
  return JSON.parse(
    execFileSync('python3', ['-c', script, filePath], { encoding: 'utf-8' }))
}

/** Load an annotation file with the primary (Python) implementation. */
export function primaryLoadAnnotations(filePath: string): any {
  const script = [
    'import json, sys',
    'from conceptforge.corpus import load_annotations',
    'insts = load_annotations(sys.argv[1])',
    'print(json.dumps([{"image_id": g.image_id, "part": g.part_id,',
    '  "x": g.center[0], "y": g.center[1], "bin": g.viewpoint_bin,',
    '  "box": g.box} for g in insts]))',
  ].join('\n')
  return JSON.parse(
    execFileSync('python3', ['-c', script, filePath], { encoding: 'utf-8' }))
}
