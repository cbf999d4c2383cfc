import type { WsiLevel } from "./types.js";

export interface Viewport {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface TileAddress {
  x: number;
  y: number;
}

export function tileGrid(level: WsiLevel): { cols: number; rows: number } {
  return {
    cols: Math.max(1, Math.ceil(level.cols / level.tileSize)),
    rows: Math.max(1, Math.ceil(level.rows / level.tileSize)),
  };
}

/** Keep the viewport origin inside the level image; a viewport larger than
 * the level pins to the origin. */
export function clampViewport(vp: Viewport, level: WsiLevel): Viewport {
  const maxX = Math.max(0, level.cols - vp.w);
  const maxY = Math.max(0, level.rows - vp.h);
  return {
    x: Math.min(Math.max(vp.x, 0), maxX),
    y: Math.min(Math.max(vp.y, 0), maxY),
    w: vp.w,
    h: vp.h,
  };
}

/** Tile addresses intersecting the viewport, clamped to the level's grid.
 * Only these are requested; panning farther never asks for tiles outside
 * the image. */
export function visibleTiles(vp: Viewport, level: WsiLevel): TileAddress[] {
  const grid = tileGrid(level);
  const clamped = clampViewport(vp, level);
  const first = {
    x: Math.floor(clamped.x / level.tileSize),
    y: Math.floor(clamped.y / level.tileSize),
  };
  const last = {
    x: Math.min(grid.cols - 1,
                Math.floor((clamped.x + Math.max(clamped.w - 1, 0)) / level.tileSize)),
    y: Math.min(grid.rows - 1,
                Math.floor((clamped.y + Math.max(clamped.h - 1, 0)) / level.tileSize)),
  };
  const tiles: TileAddress[] = [];
  for (let ty = first.y; ty <= last.y; ty++) {
    for (let tx = first.x; tx <= last.x; tx++) {
      tiles.push({ x: tx, y: ty });
    }
  }
  return tiles;
}

export function clampLevel(index: number, levels: WsiLevel[]): number {
  return Math.min(Math.max(index, 0), Math.max(levels.length - 1, 0));
}

/** Recenter the viewport when switching levels so the view stays on the
 * same image point (levels double/halve resolution). */
export function viewportForLevelChange(vp: Viewport, from: WsiLevel,
                                       to: WsiLevel): Viewport {
  const fx = to.cols / from.cols;
  const fy = to.rows / from.rows;
  const cx = (vp.x + vp.w / 2) * fx;
  const cy = (vp.y + vp.h / 2) * fy;
  return clampViewport(
    { x: cx - vp.w / 2, y: cy - vp.h / 2, w: vp.w, h: vp.h }, to);
}
