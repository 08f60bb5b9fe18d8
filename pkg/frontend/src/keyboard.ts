/**
 * Keyboard-only decision flow. Every decision completes in at most three
 * keystrokes:
 *
 *   skip              s
 *   create class      c, Enter            (name prefilled with the centroid)
 *   assign, top hit   a, Enter            (picker is most-recently-used first)
 *   assign, nth hit   a, digit 1-9        (or a, arrows, Enter)
 *
 * Exemplar editing: e, digit/arrows+Enter to pick a class, edit, Enter.
 */

import type { ReviewController } from "./state.js";

export interface KeyInput {
  key: string;
  /** True when focus is in a text field, so letters must not be shortcuts. */
  inTextField: boolean;
}

function digitIndex(key: string): number | null {
  if (key.length === 1 && key >= "1" && key <= "9") return key.charCodeAt(0) - 49;
  return null;
}

/** Route one keystroke; returns true when the event was consumed. */
export function handleKey(controller: ReviewController, input: KeyInput): boolean {
  const { key, inTextField } = input;
  const phase = controller.phase;

  if (key === "Escape") {
    if (
      phase === "pick-assign" ||
      phase === "pick-edit" ||
      phase === "naming" ||
      phase === "edit"
    ) {
      controller.cancelOverlay();
      return true;
    }
    return false;
  }

  if (key === "Enter") {
    if (phase === "pick-assign" || phase === "pick-edit") {
      void controller.pickSelected();
      return true;
    }
    if (phase === "naming") {
      void controller.confirmName();
      return true;
    }
    if (phase === "edit") {
      void controller.saveExemplar();
      return true;
    }
    return false;
  }

  if (phase === "pick-assign" || phase === "pick-edit") {
    if (key === "ArrowDown") {
      controller.moveSelection(1);
      return true;
    }
    if (key === "ArrowUp") {
      controller.moveSelection(-1);
      return true;
    }
    const index = digitIndex(key);
    // Digits jump straight to a row while the search box is empty;
    // once a search is typed they are ordinary search characters.
    if (index !== null && controller.search === "") {
      void controller.pickIndex(index);
      return true;
    }
    return false; // remaining keys type into the search field
  }

  if (inTextField) return false;

  if (phase === "queue") {
    switch (key) {
      case "a":
        controller.openAssign();
        return true;
      case "c":
        controller.openNaming();
        return true;
      case "s":
        void controller.skip();
        return true;
      case "e":
        controller.openEdit();
        return true;
    }
  }
  return false;
}
