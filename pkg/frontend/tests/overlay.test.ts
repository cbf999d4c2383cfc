import { describe, expect, it } from "vitest";

import { DASH_PATTERN, FILL_OPACITY, toScreen, toScreenAll, transformFor } from "../src/overlay.js";
import type { RegionBox } from "../src/types.js";

const box = (x: number, y: number, w: number, h: number, id = 1): RegionBox =>
  ({ id, x, y, w, h, pixelCount: w * h });

describe("toScreen", () => {
  it("is identity under the unit transform", () => {
    const rect = toScreen(box(2, 3, 4, 5), transformFor(1, { x: 0, y: 0 }));
    expect([rect.x, rect.y, rect.w, rect.h]).toEqual([2, 3, 4, 5]);
  });

  it("doubles rect size under 2x zoom", () => {
    const rect = toScreen(box(2, 2, 3, 3), transformFor(2, { x: 0, y: 0 }));
    expect([rect.x, rect.y, rect.w, rect.h]).toEqual([4, 4, 6, 6]);
  });

  it("applies pan as a scaled offset", () => {
    const rect = toScreen(box(10, 10, 2, 2), transformFor(2, { x: 4, y: 6 }));
    expect([rect.x, rect.y]).toEqual([(10 - 4) * 2, (10 - 6) * 2]);
  });

  it("labels every region with its numeric id", () => {
    const rects = toScreenAll([box(0, 0, 1, 1, 1), box(5, 5, 1, 1, 2)],
                              transformFor(1, { x: 0, y: 0 }));
    expect(rects.map((r) => r.label)).toEqual(["1", "2"]);
  });

  it("round-trips through the inverse transform", () => {
    const t = transformFor(2.5, { x: 13, y: -7 });
    const rect = toScreen(box(21, 34, 8, 9), t);
    expect((rect.x - t.offsetX) / t.scaleX).toBeCloseTo(21, 9);
    expect((rect.y - t.offsetY) / t.scaleY).toBeCloseTo(34, 9);
    expect(rect.w / t.scaleX).toBeCloseTo(8, 9);
    expect(rect.h / t.scaleY).toBeCloseTo(9, 9);
  });
});

describe("styling contract", () => {
  it("uses a 4px dash and 40% fill opacity", () => {
    expect(DASH_PATTERN).toEqual([4, 4]);
    expect(FILL_OPACITY).toBeCloseTo(0.4);
  });
});
