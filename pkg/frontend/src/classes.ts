/** Distortion class codes, display names, and the overlay color legend. */

export enum DistortionClass {
  Jitter = 1,
  Noise = 2,
  Overexposure = 3,
  Blur = 4,
  LowLight = 5,
}

export const CLASS_LABELS: Record<DistortionClass, string> = {
  [DistortionClass.Jitter]: "jitter",
  [DistortionClass.Noise]: "noise",
  [DistortionClass.Overexposure]: "overexposure",
  [DistortionClass.Blur]: "blur",
  [DistortionClass.LowLight]: "low light",
};

export interface LegendColor {
  r: number;
  g: number;
  b: number;
  a: number;
}

const OVERLAY_ALPHA = 110;

/** One distinct color per class, used for labeled-region overlays. */
export const CLASS_COLORS: Record<DistortionClass, LegendColor> = {
  [DistortionClass.Jitter]: { r: 239, g: 83, b: 80, a: OVERLAY_ALPHA }, // red
  [DistortionClass.Noise]: { r: 171, g: 71, b: 188, a: OVERLAY_ALPHA }, // purple
  [DistortionClass.Overexposure]: { r: 255, g: 202, b: 40, a: OVERLAY_ALPHA }, // yellow
  [DistortionClass.Blur]: { r: 66, g: 165, b: 245, a: OVERLAY_ALPHA }, // blue
  [DistortionClass.LowLight]: { r: 38, g: 166, b: 154, a: OVERLAY_ALPHA }, // teal
};

/** Neutral highlight for a picked-but-unlabeled region. */
export const HIGHLIGHT_COLOR: LegendColor = { r: 255, g: 255, b: 255, a: 90 };

export const ALL_CLASSES: DistortionClass[] = [
  DistortionClass.Jitter,
  DistortionClass.Noise,
  DistortionClass.Overexposure,
  DistortionClass.Blur,
  DistortionClass.LowLight,
];

/**
 * Keyboard shortcuts: digits 1-5 select a class for the highlighted region,
 * 0 clears the current selection. Anything else is ignored.
 */
export type ShortcutAction =
  | { kind: "label"; cls: DistortionClass }
  | { kind: "clear" }
  | { kind: "none" };

export function shortcutFor(key: string): ShortcutAction {
  if (key === "0") return { kind: "clear" };
  const n = Number(key);
  if (Number.isInteger(n) && n >= 1 && n <= 5) {
    return { kind: "label", cls: n as DistortionClass };
  }
  return { kind: "none" };
}
