/** Client-side review state: one session, per-hop selections, submit gating.
 *
 * All truth lives server-side; this only tracks what the reviewer picked and
 * whether the one-shot submit already happened.
 */

import type { CorrectionIn, ExplanationDetail, Session } from "./api.js";

export class ReviewState {
  session: Session | null = null;
  explanations: ExplanationDetail[] = [];
  active = 0;
  submitted = false;
  private selections = new Map<string, (number | null)[]>();

  start(session: Session, explanations: ExplanationDetail[]): void {
    this.session = session;
    this.explanations = explanations;
    this.active = 0;
    this.submitted = false;
    this.selections.clear();
    for (const exp of explanations) {
      this.selections.set(exp.id, exp.review_hops.map(() => null));
    }
  }

  selectionsFor(explanationId: string): (number | null)[] {
    return this.selections.get(explanationId) ?? [];
  }

  select(explanationId: string, hopIndex: number, optionIndex: number): void {
    if (this.submitted) return;
    const slots = this.selections.get(explanationId);
    if (!slots || hopIndex < 0 || hopIndex >= slots.length) return;
    if (optionIndex < 0 || optionIndex >= 5) return;
    slots[hopIndex] = optionIndex;
  }

  allSelected(explanationId: string): boolean {
    const slots = this.selections.get(explanationId);
    return !!slots && slots.every((s) => s !== null);
  }

  firstUnselected(explanationId: string): number {
    const slots = this.selections.get(explanationId) ?? [];
    return slots.findIndex((s) => s === null);
  }

  progress(): { selected: number; total: number } {
    let selected = 0;
    let total = 0;
    for (const slots of this.selections.values()) {
      total += slots.length;
      selected += slots.filter((s) => s !== null).length;
    }
    return { selected, total };
  }

  canSubmit(): boolean {
    const { selected, total } = this.progress();
    return !this.submitted && total > 0 && selected === total;
  }

  /** One payload per hop, exactly mirroring the selections; empty after the
   * first call so a double-click cannot produce a second set. */
  takeSubmission(): CorrectionIn[] {
    if (!this.canSubmit() || !this.session) return [];
    const payloads: CorrectionIn[] = [];
    for (const exp of this.explanations) {
      const slots = this.selections.get(exp.id) ?? [];
      slots.forEach((chosen, hopIndex) => {
        payloads.push({
          explanation_id: exp.id,
          hop_index: hopIndex,
          chosen: chosen as number,
          session_id: this.session!.session_id,
        });
      });
    }
    this.submitted = true;
    return payloads;
  }
}
