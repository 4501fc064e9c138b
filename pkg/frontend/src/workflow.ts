/**
 * Two-step annotation workflow controller.
 *
 * Step 1: click the image to pick a pre-segmented candidate region.
 * Step 2: assign a distortion class (or adjust the region first), then
 * submit. All mutations go through the server; local view state only
 * updates after the server acknowledges, so overlays never diverge from
 * the session of record.
 */

import { ApiClient, ApiError, type BlockEdit, type SessionView } from "./api.js";
import {
  CLASS_COLORS,
  DistortionClass,
  HIGHLIGHT_COLOR,
  shortcutFor,
  type LegendColor,
} from "./classes.js";
import { sameMask, type RleMask } from "./rle.js";

export type Tool = "pick" | "adjust-add" | "adjust-remove" | "label";

export interface Overlay {
  mask: RleMask;
  color: LegendColor;
  role: "candidate" | "labeled" | "highlight";
  cls?: DistortionClass;
}

export interface SubmitOutcome {
  submitted: boolean;
  annotationId?: string;
  needsConfirmation?: boolean;
}

export class WorkflowController {
  private session: SessionView | null = null;
  private highlighted: RleMask | null = null;
  hint: string | null = null;
  tool: Tool = "pick";
  showCandidates = false;

  constructor(private api: ApiClient) {}

  get sessionId(): string {
    if (!this.session) throw new Error("no open session");
    return this.session.session_id;
  }

  get state(): "idle" | "open" | "submitted" {
    return this.session ? this.session.state : "idle";
  }

  /** The quality description being annotated; shown at every step. */
  get referenceText(): string {
    if (!this.session) throw new Error("no open session");
    return this.session.reference_text;
  }

  get highlightedRegion(): RleMask | null {
    return this.highlighted;
  }

  get labeledRegions(): { cls: DistortionClass; mask: RleMask }[] {
    if (!this.session) return [];
    return this.session.working.map((w) => ({
      cls: w.class as DistortionClass,
      mask: w.mask,
    }));
  }

  async open(itemId: string, annotatorId: string): Promise<void> {
    this.session = await this.api.createSession(itemId, annotatorId);
    this.highlighted = null;
    this.hint = null;
  }

  /** Step 1: click at image coordinates; highlights the region under it. */
  async pick(x: number, y: number): Promise<RleMask | null> {
    const { region } = await this.api.pick(this.sessionId, x, y);
    if (region === null) {
      this.hint = "no region here";
      return null; // background click leaves the selection unchanged
    }
    this.hint = null;
    this.highlighted = region;
    return region;
  }

  /** Refine the highlighted region with block-granularity edits. */
  async adjust(edits: BlockEdit[]): Promise<void> {
    if (!this.highlighted) throw new Error("no region selected");
    const { region } = await this.api.adjust(this.sessionId, this.highlighted, edits);
    this.highlighted = region;
  }

  /** Step 2: assign a class to the highlighted region. */
  async labelHighlighted(cls: DistortionClass): Promise<void> {
    if (!this.highlighted) {
      this.hint = "pick a region first";
      return;
    }
    try {
      this.session = await this.api.label(this.sessionId, this.highlighted, cls);
    } catch (err) {
      if (err instanceof ApiError) {
        // server rejected the mutation; re-sync so the view matches it
        this.session = await this.api.getSession(this.sessionId);
      }
      throw err;
    }
    this.highlighted = null;
    this.hint = null;
  }

  clearSelection(): void {
    this.highlighted = null;
    this.hint = null;
  }

  async handleKey(key: string): Promise<void> {
    const action = shortcutFor(key);
    if (action.kind === "label") await this.labelHighlighted(action.cls);
    else if (action.kind === "clear") this.clearSelection();
  }

  /**
   * Submit the session. A submission with zero labeled regions (the
   * pristine-image case) requires an explicit confirmation pass.
   */
  async submit(confirmed = false): Promise<SubmitOutcome> {
    if (!this.session) throw new Error("no open session");
    if (this.session.working.length === 0 && !confirmed) {
      return { submitted: false, needsConfirmation: true };
    }
    const result = await this.api.submit(this.sessionId);
    this.session = await this.api.getSession(this.sessionId);
    this.highlighted = null;
    return { submitted: true, annotationId: result.annotation_id };
  }

  /** Overlay stack for the canvas, bottom to top. */
  overlays(): Overlay[] {
    if (!this.session) return [];
    const out: Overlay[] = [];
    if (this.showCandidates) {
      for (const mask of this.session.candidates) {
        out.push({ mask, color: { r: 160, g: 160, b: 160, a: 40 }, role: "candidate" });
      }
    }
    for (const { cls, mask } of this.labeledRegions) {
      out.push({ mask, color: CLASS_COLORS[cls], role: "labeled", cls });
    }
    if (this.highlighted) {
      const alreadyLabeled = this.labeledRegions.some((r) =>
        sameMask(r.mask, this.highlighted as RleMask),
      );
      if (!alreadyLabeled) {
        out.push({ mask: this.highlighted, color: HIGHLIGHT_COLOR, role: "highlight" });
      }
    }
    return out;
  }
}
