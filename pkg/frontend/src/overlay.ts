import type { RegionBox } from "./types.js";

/** Overlay rectangle styling: semi-transparent and dashed so the pixel data
 * underneath stays readable. */
export const DASH_PATTERN: readonly number[] = [4, 4];
export const FILL_OPACITY = 0.4;
export const STROKE_COLOR = "rgba(255, 80, 80, 0.9)";
export const FILL_COLOR = `rgba(255, 80, 80, ${FILL_OPACITY})`;

export interface ScreenTransform {
  scaleX: number;
  scaleY: number;
  offsetX: number;
  offsetY: number;
}

export interface ScreenRect {
  id: number;
  label: string;
  x: number;
  y: number;
  w: number;
  h: number;
}

export function transformFor(zoom: number, pan: { x: number; y: number }): ScreenTransform {
  return {
    scaleX: zoom,
    scaleY: zoom,
    offsetX: -pan.x * zoom,
    offsetY: -pan.y * zoom,
  };
}

/** Map a buffer-space region box to screen coordinates. */
export function toScreen(box: RegionBox, t: ScreenTransform): ScreenRect {
  return {
    id: box.id,
    label: String(box.id),
    x: box.x * t.scaleX + t.offsetX,
    y: box.y * t.scaleY + t.offsetY,
    w: box.w * t.scaleX,
    h: box.h * t.scaleY,
  };
}

export function toScreenAll(boxes: RegionBox[], t: ScreenTransform): ScreenRect[] {
  return boxes.map((box) => toScreen(box, t));
}
