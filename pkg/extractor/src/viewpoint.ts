/**
 * Continuous azimuth to the five named viewpoint bins.
 *
 * Left/right symmetric: the azimuth is folded to [0, 180] and split into
 * five 36-degree bins, so each named bin covers 72 degrees of the full
 * viewing circle (front spans [-36, 36), front-side both [36, 72) arcs,
 * and so on).
 */

export const VIEWPOINT_BINS = [
  'front', 'front-side', 'side', 'rear-side', 'rear',
] as const

export type ViewpointBin = (typeof VIEWPOINT_BINS)[number] | 'unknown'

export function azimuthToBin(azimuthDeg: number | null | undefined): ViewpointBin {
  if (azimuthDeg === null || azimuthDeg === undefined ||
      !Number.isFinite(azimuthDeg)) {
    return 'unknown'
  }
  const a = ((azimuthDeg % 360) + 360) % 360
  const folded = Math.min(a, 360 - a)
  const idx = Math.min(Math.floor(folded / 36), 4)
  return VIEWPOINT_BINS[idx]
}
