import type { AnnotationPayload, HallucType } from "./types.js";

/**
 * Selection state for the sample currently on screen.
 *
 * Mirrors the server invariant: a hallucination type is present if and
 * only if the sentence is marked hallucinated. The UI must never build
 * a payload the server would reject with 422, so `buildPayload` only
 * exists on valid selections and the type selector is reported enabled
 * only while "hallucinated" is chosen.
 */
export class Selection {
  hallucinated: boolean | null = null;
  hallucType: HallucType | null = null;

  reset(): void {
    this.hallucinated = null;
    this.hallucType = null;
  }

  markHallucinated(flag: boolean): void {
    this.hallucinated = flag;
    if (!flag) {
      this.hallucType = null;
    }
  }

  chooseType(type: HallucType): boolean {
    if (this.hallucinated !== true) {
      return false; // blocked client-side, matching the server 422 contract
    }
    this.hallucType = type;
    return true;
  }

  typeSelectorEnabled(): boolean {
    return this.hallucinated === true;
  }

  canSubmit(): boolean {
    if (this.hallucinated === null) return false;
    if (this.hallucinated) return this.hallucType !== null;
    return this.hallucType === null;
  }

  buildPayload(annotator: string | null = null): AnnotationPayload {
    if (!this.canSubmit()) {
      throw new Error("selection is incomplete or inconsistent");
    }
    return {
      hallucinated: this.hallucinated as boolean,
      halluc_type: this.hallucinated ? this.hallucType : null,
      annotator,
    };
  }
}

export type KeyAction =
  | { kind: "mark"; hallucinated: boolean }
  | { kind: "type"; type: HallucType }
  | { kind: "submit" }
  | { kind: "replay" }
  | { kind: "none" };

/** Keyboard mapping: y/n mark, a/b/c choose type, Enter submits, r replays. */
export function actionForKey(key: string): KeyAction {
  switch (key.toLowerCase()) {
    case "y":
      return { kind: "mark", hallucinated: true };
    case "n":
      return { kind: "mark", hallucinated: false };
    case "a":
    case "b":
    case "c":
      return { kind: "type", type: key.toUpperCase() as HallucType };
    case "enter":
      return { kind: "submit" };
    case "r":
      return { kind: "replay" };
    default:
      return { kind: "none" };
  }
}

export function applyAction(selection: Selection, action: KeyAction): void {
  if (action.kind === "mark") {
    selection.markHallucinated(action.hallucinated);
  } else if (action.kind === "type") {
    selection.chooseType(action.type);
  }
}

export function progressPercent(labeled: number, total: number): number {
  if (total <= 0) return 0;
  return Math.round((labeled / total) * 100);
}

export function progressSummary(labeled: number, total: number, rate: number | null): string {
  const pct = progressPercent(labeled, total);
  const rateText = rate === null ? "n/a" : `${(rate * 100).toFixed(1)}%`;
  return `${labeled} / ${total} labeled (${pct}%) — hallucination rate so far: ${rateText}`;
}
