import { describe, expect, it } from "vitest";

import type { ExplanationDetail, Session } from "../src/api.js";
import { ReviewState } from "../src/state.js";

function detail(id: string, hops: number): ExplanationDetail {
  return {
    id,
    status: "pending",
    query: { head: "obj1", relation: "ObjUsedTo", tail: "act1" },
    predicted: true,
    text: `explanation ${id}`,
    review_hops: Array.from({ length: hops }, (_, i) => ({
      head: `h${i}`,
      relation: "ObjInLoc",
      tail: `t${i}`,
      slot: "tail",
      options: [
        { head: `h${i}`, relation: "ObjInLoc", tail: `t${i}` },
        { head: `h${i}`, relation: "ObjInLoc", tail: "alt1" },
        { head: `h${i}`, relation: "ObjInLoc", tail: "alt2" },
        { head: `h${i}`, relation: "ObjInLoc", tail: "alt3" },
        null,
      ],
    })),
  };
}

const session: Session = { session_id: "session-000", status: "open", explanation_ids: ["exp-000", "exp-001"] };

function started(hops = [3, 2]): ReviewState {
  const state = new ReviewState();
  state.start(session, hops.map((n, i) => detail(`exp-00${i}`, n)));
  return state;
}

describe("ReviewState", () => {
  it("blocks submission until every hop of every explanation is selected", () => {
    const state = started();
    expect(state.canSubmit()).toBe(false);
    state.select("exp-000", 0, 1);
    state.select("exp-000", 1, 0);
    state.select("exp-000", 2, 4);
    expect(state.canSubmit()).toBe(false); // exp-001 untouched
    expect(state.allSelected("exp-000")).toBe(true);
    expect(state.allSelected("exp-001")).toBe(false);
    state.select("exp-001", 0, 2);
    expect(state.firstUnselected("exp-001")).toBe(1);
    state.select("exp-001", 1, 3);
    expect(state.canSubmit()).toBe(true);
  });

  it("maps selections one-to-one onto correction payloads", () => {
    const state = started([2, 1]);
    state.select("exp-000", 0, 1);
    state.select("exp-000", 1, 4);
    state.select("exp-001", 0, 0);
    const payloads = state.takeSubmission();
    expect(payloads).toEqual([
      { explanation_id: "exp-000", hop_index: 0, chosen: 1, session_id: "session-000" },
      { explanation_id: "exp-000", hop_index: 1, chosen: 4, session_id: "session-000" },
      { explanation_id: "exp-001", hop_index: 0, chosen: 0, session_id: "session-000" },
    ]);
  });

  it("produces a single correction set even when submitted twice", () => {
    const state = started([1, 1]);
    state.select("exp-000", 0, 2);
    state.select("exp-001", 0, 3);
    const first = state.takeSubmission();
    const second = state.takeSubmission();
    expect(first).toHaveLength(2);
    expect(second).toEqual([]); // double-click safe
    expect(state.submitted).toBe(true);
  });

  it("ignores selections after submission and out-of-range indices", () => {
    const state = started([1]);
    state.select("exp-000", 0, 9); // invalid option
    expect(state.canSubmit()).toBe(false);
    state.select("exp-000", 5, 1); // invalid hop
    expect(state.canSubmit()).toBe(false);
    state.select("exp-000", 0, 1);
    state.takeSubmission();
    state.select("exp-000", 0, 2);
    expect(state.selectionsFor("exp-000")[0]).toBe(1);
  });

  it("tracks progress across explanations", () => {
    const state = started([2, 2]);
    expect(state.progress()).toEqual({ selected: 0, total: 4 });
    state.select("exp-000", 0, 0);
    state.select("exp-001", 1, 4);
    expect(state.progress()).toEqual({ selected: 2, total: 4 });
  });

  it("cannot submit an empty review", () => {
    const state = new ReviewState();
    state.start(session, []);
    expect(state.canSubmit()).toBe(false);
    expect(state.takeSubmission()).toEqual([]);
  });
});
