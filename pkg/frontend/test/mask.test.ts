import { describe, expect, it } from "vitest";

import { decodeMask, encodeMask, MaskModel, maskToRgba, paintStroke } from "../src/mask.js";
import type { Palette } from "../src/types.js";

const brush = (classIndex: number, radius = 2, erase = false) => ({ classIndex, radius, erase });

describe("MaskModel", () => {
  it("round-trips through the wire encoding index-exact", () => {
    const mask = new MaskModel(32, 32);
    for (let i = 0; i < mask.data.length; i++) mask.data[i] = i % 19;
    const back = decodeMask(encodeMask(mask));
    expect(back.width).toBe(32);
    expect(back.height).toBe(32);
    expect(back.equals(mask)).toBe(true);
  });

  it("rejects payloads whose size disagrees with the dimensions", () => {
    expect(() => new MaskModel(4, 4, new Uint8Array(15))).toThrow();
  });

  it("full-canvas fill paints a uniform class", () => {
    const mask = new MaskModel(16, 16);
    mask.fill(3);
    expect(mask.data.every((v) => v === 3)).toBe(true);
  });

  it("never accepts out-of-range classes", () => {
    const mask = new MaskModel(8, 8);
    expect(() => mask.fill(19)).toThrow(/out of range/);
    expect(() => paintStroke(mask, [{ x: 2, y: 2 }], brush(42))).toThrow(/out of range/);
    expect(() => paintStroke(mask, [{ x: 2, y: 2 }], brush(-1))).toThrow(/out of range/);
  });
});

describe("paintStroke", () => {
  it("zero-length path changes nothing", () => {
    const mask = new MaskModel(16, 16);
    const before = mask.clone();
    paintStroke(mask, [], brush(5));
    expect(mask.equals(before)).toBe(true);
  });

  it("stamps a disc at a single point", () => {
    const mask = new MaskModel(16, 16);
    paintStroke(mask, [{ x: 8, y: 8 }], brush(7, 2));
    expect(mask.at(8, 8)).toBe(7);
    expect(mask.at(8, 10)).toBe(7);
    expect(mask.at(8, 12)).toBe(0);
  });

  it("covers the whole segment between points", () => {
    const mask = new MaskModel(32, 32);
    paintStroke(mask, [{ x: 2, y: 16 }, { x: 29, y: 16 }], brush(4, 1));
    for (let x = 2; x <= 29; x++) expect(mask.at(x, 16)).toBe(4);
  });

  it("erase paints the background class", () => {
    const mask = new MaskModel(16, 16);
    mask.fill(9);
    paintStroke(mask, [{ x: 4, y: 4 }], brush(9, 2, true));
    expect(mask.at(4, 4)).toBe(0);
  });

  it("clips strokes at the canvas border", () => {
    const mask = new MaskModel(8, 8);
    paintStroke(mask, [{ x: 0, y: 0 }], brush(2, 5));
    expect(mask.at(0, 0)).toBe(2);
    expect(mask.at(7, 7)).toBe(0);
  });
});

describe("maskToRgba", () => {
  it("maps class indices through the palette", () => {
    const palette: Palette = {
      num_classes: 19,
      classes: Array.from({ length: 19 }, (_, i) => ({
        index: i,
        name: `c${i}`,
        color: [i, 2 * i, 3 * i] as [number, number, number],
      })),
    };
    const mask = new MaskModel(2, 1, new Uint8Array([1, 4]));
    const rgba = maskToRgba(mask, palette, 200);
    expect([...rgba.slice(0, 4)]).toEqual([1, 2, 3, 200]);
    expect([...rgba.slice(4, 8)]).toEqual([4, 8, 12, 200]);
  });
});
