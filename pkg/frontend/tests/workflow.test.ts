import { describe, expect, it } from "vitest";

import { ApiError, type SessionView } from "../src/api.js";
import { DistortionClass } from "../src/classes.js";
import { WorkflowController } from "../src/workflow.js";
import type { RleMask } from "../src/rle.js";

const mask = (counts: number[]): RleMask => ({ size: [4, 4], order: "row-major", counts });
const CAND_A = mask([0, 4, 12]); // top row
const CAND_B = mask([12, 4]); // bottom row

/** In-memory stand-in for the server, mirroring its label/pick semantics. */
class FakeApi {
  session: SessionView = {
    session_id: "s1",
    item_id: "item-1",
    annotator_id: "tester",
    reference_text: "the top of the image is blurry",
    candidates: [CAND_A, CAND_B],
    working: [],
    state: "open",
  };
  rejectNextLabel = false;
  submitted = 0;

  async createSession(): Promise<SessionView> {
    return structuredClone(this.session);
  }

  async getSession(): Promise<SessionView> {
    return structuredClone(this.session);
  }

  async pick(_sid: string, x: number, y: number): Promise<{ region: RleMask | null }> {
    if (y === 0) return { region: CAND_A };
    if (y === 3) return { region: CAND_B };
    return { region: null };
  }

  async label(_sid: string, m: RleMask, cls: number): Promise<SessionView> {
    if (this.rejectNextLabel) {
      this.rejectNextLabel = false;
      throw new ApiError(400, "rejected");
    }
    this.session.working = this.session.working.filter(
      (w) => JSON.stringify(w.mask) !== JSON.stringify(m),
    );
    this.session.working.push({ class: cls, mask: m });
    return structuredClone(this.session);
  }

  async adjust(): Promise<{ region: RleMask }> {
    return { region: CAND_A };
  }

  async submit(): Promise<{ session_id: string; annotation_id: string }> {
    this.submitted++;
    this.session.state = "submitted";
    return { session_id: "s1", annotation_id: "s1-human" };
  }
}

const setup = async () => {
  const api = new FakeApi();
  const wf = new WorkflowController(api as never);
  await wf.open("item-1", "tester");
  return { api, wf };
};

describe("step 1: pick", () => {
  it("highlights the returned region", async () => {
    const { wf } = await setup();
    await wf.pick(1, 0);
    expect(wf.highlightedRegion).toEqual(CAND_A);
    expect(wf.hint).toBeNull();
  });

  it("background click shows a hint and keeps the selection", async () => {
    const { wf } = await setup();
    await wf.pick(1, 0);
    await wf.pick(1, 2);
    expect(wf.hint).toBe("no region here");
    expect(wf.highlightedRegion).toEqual(CAND_A);
  });

  it("repeated pick on the same region is idempotent", async () => {
    const { wf } = await setup();
    await wf.pick(1, 0);
    const first = wf.overlays();
    await wf.pick(2, 0);
    expect(wf.overlays()).toEqual(first);
  });
});

describe("step 2: label", () => {
  it("records the class server-side before rendering it", async () => {
    const { api, wf } = await setup();
    await wf.pick(1, 0);
    await wf.labelHighlighted(DistortionClass.Blur);
    expect(api.session.working).toEqual([{ class: 4, mask: CAND_A }]);
    const labeled = wf.overlays().filter((o) => o.role === "labeled");
    expect(labeled).toHaveLength(1);
    expect(labeled[0].cls).toBe(DistortionClass.Blur);
  });

  it("relabeling swaps the color, not the region count", async () => {
    const { wf } = await setup();
    await wf.pick(1, 0);
    await wf.labelHighlighted(DistortionClass.Blur);
    await wf.pick(1, 0);
    await wf.labelHighlighted(DistortionClass.Noise);
    const labeled = wf.overlays().filter((o) => o.role === "labeled");
    expect(labeled).toHaveLength(1);
    expect(labeled[0].cls).toBe(DistortionClass.Noise);
  });

  it("re-syncs from the server when a mutation is rejected", async () => {
    const { api, wf } = await setup();
    await wf.pick(1, 0);
    api.rejectNextLabel = true;
    await expect(wf.labelHighlighted(DistortionClass.Blur)).rejects.toThrow(ApiError);
    expect(wf.overlays().filter((o) => o.role === "labeled")).toHaveLength(0);
  });

  it("keyboard shortcuts label and clear", async () => {
    const { wf } = await setup();
    await wf.pick(1, 0);
    await wf.handleKey("4");
    expect(wf.labeledRegions[0].cls).toBe(DistortionClass.Blur);
    await wf.pick(1, 3);
    await wf.handleKey("0");
    expect(wf.highlightedRegion).toBeNull();
  });
});

describe("submit", () => {
  it("asks for confirmation when nothing is labeled", async () => {
    const { api, wf } = await setup();
    const outcome = await wf.submit();
    expect(outcome).toEqual({ submitted: false, needsConfirmation: true });
    expect(api.submitted).toBe(0);
    expect((await wf.submit(true)).submitted).toBe(true);
  });

  it("submits directly once a region is labeled", async () => {
    const { api, wf } = await setup();
    await wf.pick(1, 0);
    await wf.labelHighlighted(DistortionClass.Blur);
    const outcome = await wf.submit();
    expect(outcome.submitted).toBe(true);
    expect(outcome.annotationId).toBe("s1-human");
    expect(api.submitted).toBe(1);
    expect(wf.state).toBe("submitted");
  });
});

describe("reference text", () => {
  it("is exposed in every workflow state", async () => {
    const { wf } = await setup();
    expect(wf.referenceText).toContain("blurry");
    await wf.pick(1, 0);
    expect(wf.referenceText).toContain("blurry");
    await wf.labelHighlighted(DistortionClass.Blur);
    expect(wf.referenceText).toContain("blurry");
    await wf.submit();
    expect(wf.referenceText).toContain("blurry");
  });
});
