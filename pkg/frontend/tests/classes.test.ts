import { describe, expect, it } from "vitest";

import {
  ALL_CLASSES,
  CLASS_COLORS,
  CLASS_LABELS,
  DistortionClass,
  shortcutFor,
} from "../src/classes.js";

describe("class codes", () => {
  it("uses the canonical code order", () => {
    expect(ALL_CLASSES).toEqual([1, 2, 3, 4, 5]);
    expect(CLASS_LABELS[DistortionClass.Blur]).toBe("blur");
    expect(CLASS_LABELS[DistortionClass.LowLight]).toBe("low light");
  });

  it("gives every class a distinct legend color", () => {
    const seen = new Set(
      ALL_CLASSES.map((c) => `${CLASS_COLORS[c].r},${CLASS_COLORS[c].g},${CLASS_COLORS[c].b}`),
    );
    expect(seen.size).toBe(5);
  });
});

describe("keyboard shortcuts", () => {
  it("maps digits 1-5 to classes in code order", () => {
    for (const cls of ALL_CLASSES) {
      expect(shortcutFor(String(cls))).toEqual({ kind: "label", cls });
    }
  });

  it("maps 0 to clear", () => {
    expect(shortcutFor("0")).toEqual({ kind: "clear" });
  });

  it("ignores everything else", () => {
    for (const key of ["6", "a", "Enter", " ", "-1"]) {
      expect(shortcutFor(key)).toEqual({ kind: "none" });
    }
  });
});
