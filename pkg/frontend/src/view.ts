/**
 * DOM layer. Builds the page skeleton once, then re-renders the dynamic
 * regions whenever the controller emits. All text lands via textContent,
 * and every rendered number is a field from a service response.
 */

import { handleKey } from "./keyboard.js";
import type { ReviewController } from "./state.js";

export interface AppHandles {
  dispose(): void;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: { id?: string; className?: string; text?: string } = {},
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  if (attrs.id !== undefined) node.id = attrs.id;
  if (attrs.className !== undefined) node.className = attrs.className;
  if (attrs.text !== undefined) node.textContent = attrs.text;
  return node;
}

function isTextField(target: EventTarget | null): boolean {
  if (target === null || typeof (target as Element).tagName !== "string") return false;
  const tag = (target as Element).tagName;
  return tag === "INPUT" || tag === "TEXTAREA";
}

export function mountApp(root: HTMLElement, controller: ReviewController): AppHandles {
  const doc = root.ownerDocument;
  root.textContent = "";

  // Skeleton.
  const header = el(doc, "header");
  const title = el(doc, "h1", { text: "merge review" });
  const version = el(doc, "span", { id: "bank-version", className: "version" });
  const banner = el(doc, "div", { id: "banner", className: "banner hidden" });
  const bannerText = el(doc, "span", { id: "banner-text" });
  const bannerRetry = el(doc, "button", { id: "banner-retry", text: "retry" });
  banner.append(bannerText, bannerRetry);
  header.append(title, version);

  const cardPanel = el(doc, "section", { id: "card-panel", className: "card" });
  const queuePos = el(doc, "div", { id: "queue-pos", className: "queue-pos" });
  const centroid = el(doc, "div", { id: "centroid", className: "centroid" });
  const occurrences = el(doc, "div", { id: "occurrences", className: "occurrences" });
  const samples = el(doc, "ul", { id: "samples", className: "samples" });
  const hints = el(doc, "div", {
    className: "hints",
    text: "[a] assign to class   [c] create class   [s] skip   [e] edit exemplar",
  });
  cardPanel.append(queuePos, centroid, occurrences, samples, hints);

  const tally = el(doc, "aside", { id: "tally", className: "tally" });
  const tallyCreated = el(doc, "div", { id: "tally-created" });
  const tallyReviewed = el(doc, "div", { id: "tally-reviewed" });
  const tallyCoverage = el(doc, "div", { id: "tally-coverage" });
  tally.append(
    el(doc, "h2", { text: "session" }),
    tallyCreated,
    tallyReviewed,
    tallyCoverage,
  );

  const donePanel = el(doc, "section", { id: "done-panel", className: "done hidden" });

  const overlay = el(doc, "div", { id: "overlay", className: "overlay hidden" });
  const overlayTitle = el(doc, "h2", { id: "overlay-title" });
  const search = el(doc, "input", { id: "search", className: "search" });
  search.setAttribute("placeholder", "type to filter, digits jump, enter picks");
  const classList = el(doc, "ol", { id: "class-list", className: "class-list" });
  const nameInput = el(doc, "input", { id: "name-input", className: "name-input" });
  const editWrap = el(doc, "div", { id: "edit-wrap" });
  const editVersion = el(doc, "div", { id: "edit-version", className: "version" });
  const editInput = el(doc, "textarea", { id: "edit-input", className: "edit-input" });
  editWrap.append(editVersion, editInput);
  overlay.append(overlayTitle, search, classList, nameInput, editWrap);

  const main = el(doc, "main");
  main.append(cardPanel, tally);
  root.append(header, banner, main, donePanel, overlay);

  let lastPhase = "";

  function render(): void {
    const phase = controller.phase;

    version.textContent =
      controller.bankVersion === null ? "" : `bank v${controller.bankVersion}`;

    if (controller.banner === null) {
      banner.className = "banner hidden";
    } else {
      banner.className = `banner ${controller.banner.tone}`;
      bannerText.textContent = controller.banner.text;
      bannerRetry.className = controller.banner.retry === undefined ? "hidden" : "";
    }

    // Card.
    const card = controller.card;
    if (card === null) {
      queuePos.textContent = "";
      centroid.textContent = controller.busy ? "advancing..." : "";
      occurrences.textContent = "";
      samples.textContent = "";
    } else {
      queuePos.textContent = `cluster ${card.cursor + 1} of ${card.queueLength}`;
      centroid.textContent = card.centroidText;
      occurrences.textContent = `${card.occurrenceCount} occurrences`;
      samples.textContent = "";
      for (const member of card.sampleMembers) {
        samples.append(el(doc, "li", { text: member }));
      }
    }
    cardPanel.className = phase === "done" || phase === "error" ? "card hidden" : "card";

    // Tally: field-for-field from the summary endpoint.
    const summary = controller.summary;
    tallyCreated.textContent =
      summary === null ? "" : `classes created: ${summary.classesCreated}`;
    tallyReviewed.textContent =
      summary === null
        ? ""
        : `reviewed: ${summary.clustersReviewed} of ${summary.queueLength}`;
    tallyCoverage.textContent =
      summary === null
        ? ""
        : `coverage: ${(summary.labeledCoverage * 100).toFixed(1)}%`;

    // Done screen.
    if (phase === "done" && summary !== null) {
      donePanel.className = "done";
      donePanel.textContent = "";
      donePanel.append(
        el(doc, "h2", { text: "queue complete" }),
        el(doc, "div", { text: `classes created: ${summary.classesCreated}` }),
        el(doc, "div", { text: `clusters reviewed: ${summary.clustersReviewed}` }),
        el(doc, "div", {
          text: `coverage: ${(summary.labeledCoverage * 100).toFixed(1)}%`,
        }),
      );
    } else {
      donePanel.className = "done hidden";
    }

    // Overlay.
    const picking = phase === "pick-assign" || phase === "pick-edit";
    overlay.className = `overlay ${picking || phase === "naming" || phase === "edit" ? "" : "hidden"}`;
    search.className = picking ? "search" : "search hidden";
    classList.className = picking ? "class-list" : "class-list hidden";
    nameInput.className = phase === "naming" ? "name-input" : "name-input hidden";
    editWrap.className = phase === "edit" ? "" : "hidden";

    if (picking) {
      overlayTitle.textContent =
        phase === "pick-assign" ? "assign to class" : "edit exemplar of class";
      if (search.value !== controller.search) search.value = controller.search;
      classList.textContent = "";
      controller.visibleClasses().forEach((entry, index) => {
        const row = el(doc, "li", {
          className: index === controller.selected ? "row selected" : "row",
        });
        const hint = index < 9 ? `${index + 1}` : " ";
        row.append(
          el(doc, "span", { className: "digit", text: hint }),
          el(doc, "span", { className: "name", text: entry.name }),
          el(doc, "span", { className: "exemplar", text: entry.exemplarText }),
          el(doc, "span", { className: "count", text: `${entry.memberCount} members` }),
        );
        row.addEventListener("click", () => void controller.pickIndex(index));
        classList.append(row);
      });
    } else if (phase === "naming") {
      overlayTitle.textContent = "create class (enter confirms, esc cancels)";
      if (nameInput.value !== controller.nameDraft) nameInput.value = controller.nameDraft;
    } else if (phase === "edit") {
      overlayTitle.textContent = "edit exemplar (enter saves, esc cancels)";
      editVersion.textContent =
        controller.bankVersion === null ? "" : `bank v${controller.bankVersion}`;
      if (editInput.value !== controller.editDraft) editInput.value = controller.editDraft;
    }

    // Move focus only on phase transitions, never while the user types.
    if (phase !== lastPhase) {
      if (picking) search.focus();
      else if (phase === "naming") nameInput.focus();
      else if (phase === "edit") editInput.focus();
      else {
        // Leaving an overlay: release focus so letter shortcuts work again.
        const active = doc.activeElement;
        if (active === search || active === nameInput || active === editInput) {
          (active as HTMLElement).blur();
        }
      }
      lastPhase = phase;
    }
  }

  search.addEventListener("input", () => controller.setSearch(search.value));
  nameInput.addEventListener("input", () => controller.setNameDraft(nameInput.value));
  editInput.addEventListener("input", () => controller.setEditDraft(editInput.value));
  bannerRetry.addEventListener("click", () => {
    const retry = controller.banner?.retry;
    if (retry !== undefined) void retry();
  });

  const onKeydown = (event: Event): void => {
    const key = (event as KeyboardEvent).key;
    if (handleKey(controller, { key, inTextField: isTextField(event.target) })) {
      event.preventDefault();
    }
  };
  doc.addEventListener("keydown", onKeydown);

  const unsubscribe = controller.subscribe(render);
  render();

  return {
    dispose(): void {
      unsubscribe();
      doc.removeEventListener("keydown", onKeydown);
      root.textContent = "";
    },
  };
}
