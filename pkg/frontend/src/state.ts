/**
 * Session state machine for the merge-review queue.
 *
 * The server owns all authoritative state: the cluster card mirrors the
 * last /next response and is never mutated locally, tallies come from
 * /summary fields, and every mutation round-trips before the next one
 * starts. The only local embellishments are the optimistic card advance
 * (with snapshot rollback), the picker's most-recently-used ordering, and
 * the search string.
 */

import {
  ApiError,
  type ClassSummary,
  type ClusterCard,
  type DecisionAction,
  type MergeApi,
  type SessionSummary,
} from "./api.js";

export type Phase =
  | "loading"
  | "queue"
  | "pick-assign"
  | "pick-edit"
  | "naming"
  | "edit"
  | "done"
  | "error";

export interface Banner {
  tone: "error" | "info";
  text: string;
  retry?: () => Promise<void>;
}

export interface KVStore {
  get(key: string): string | null;
  set(key: string, value: string): void;
  remove(key: string): void;
}

export function memoryStore(): KVStore {
  const map = new Map<string, string>();
  return {
    get: (key) => map.get(key) ?? null,
    set: (key, value) => void map.set(key, value),
    remove: (key) => void map.delete(key),
  };
}

export const SESSION_KEY = "replybank.sessionId";

interface Snapshot {
  card: ClusterCard | null;
  phase: Phase;
}

export class ReviewController {
  phase: Phase = "loading";
  sessionId: string | null = null;
  /** Mirrors the last /next response; never mutated locally. */
  card: ClusterCard | null = null;
  /** Picker entries, refreshed from the server after every decision. */
  classes: ClassSummary[] = [];
  search = "";
  selected = 0;
  summary: SessionSummary | null = null;
  bankVersion: number | null = null;
  banner: Banner | null = null;
  busy = false;
  nameDraft = "";
  editDraft = "";
  editingClassId: number | null = null;

  private mru: number[] = [];
  private listeners = new Set<() => void>();
  private inFlight: Promise<void> | null = null;

  constructor(
    private readonly api: MergeApi,
    private readonly store: KVStore = memoryStore(),
  ) {}

  subscribe(listener: () => void): () => void {
    this.listeners.add(listener);
    return () => this.listeners.delete(listener);
  }

  private emit(): void {
    for (const listener of this.listeners) listener();
  }

  /** Resolves once no operation is in flight (for tests and scripting). */
  async settled(): Promise<void> {
    while (this.inFlight) {
      await this.inFlight;
    }
  }

  private track(op: Promise<void>): Promise<void> {
    const tracked = op.finally(() => {
      if (this.inFlight === tracked) this.inFlight = null;
    });
    this.inFlight = tracked;
    return tracked;
  }

  start(): Promise<void> {
    return this.track(this.runStart());
  }

  private async runStart(): Promise<void> {
    this.phase = "loading";
    this.emit();
    const stored = this.store.get(SESSION_KEY);
    if (stored !== null) {
      this.sessionId = stored;
      try {
        await this.sync();
        return;
      } catch (err) {
        if (err instanceof ApiError && err.status === 404) {
          // Server no longer knows the session (restart); begin a new one.
          this.store.remove(SESSION_KEY);
          this.sessionId = null;
        } else {
          this.fail(err, () => this.start());
          return;
        }
      }
    }
    try {
      const created = await this.api.createSession();
      this.sessionId = created.sessionId;
      this.store.set(SESSION_KEY, created.sessionId);
      this.notePassiveVersion(created.bankVersion);
      await this.sync();
    } catch (err) {
      this.fail(err, () => this.start());
    }
  }

  /** Pull card, picker list, and tally from the server. */
  private async sync(): Promise<void> {
    if (this.sessionId === null) return;
    const next = await this.api.nextCluster(this.sessionId);
    if (next.done) {
      this.card = null;
      this.phase = "done";
    } else {
      this.card = next;
      // Copies, so edits to the picker model never touch the card.
      this.classes = next.existingClasses.map((c) => ({ ...c }));
      this.mru = this.mru.filter((id) => this.classes.some((c) => c.classId === id));
      this.phase = "queue";
    }
    this.summary = await this.api.getSummary(this.sessionId);
    this.notePassiveVersion(this.summary.bankVersion);
    this.emit();
  }

  private fail(err: unknown, retry: () => Promise<void>): void {
    this.phase = this.card === null ? "error" : this.phase;
    this.banner = {
      tone: "error",
      text: err instanceof Error ? err.message : String(err),
      retry,
    };
    this.emit();
  }

  // Version bookkeeping: our own mutations announce their expected bump;
  // anything beyond that means another client changed the bank.
  private noteMutationVersion(version: number, expectedBump: number): void {
    if (this.bankVersion !== null && version > this.bankVersion + expectedBump) {
      this.concurrentNotice(this.bankVersion, version);
    }
    this.bankVersion = version;
  }

  private notePassiveVersion(version: number): void {
    if (this.bankVersion !== null && version > this.bankVersion) {
      this.concurrentNotice(this.bankVersion, version);
    }
    this.bankVersion = version;
  }

  private concurrentNotice(from: number, to: number): void {
    this.banner = {
      tone: "info",
      text: `bank version jumped from ${from} to ${to}: another client made changes`,
    };
  }

  /** Picker entries, most-recently-used first, filtered by substring. */
  visibleClasses(): ClassSummary[] {
    const rank = new Map(this.mru.map((id, i) => [id, i]));
    const ordered = [...this.classes].sort((a, b) => {
      const ra = rank.get(a.classId);
      const rb = rank.get(b.classId);
      if (ra !== undefined && rb !== undefined) return ra - rb;
      if (ra !== undefined) return -1;
      if (rb !== undefined) return 1;
      return 0; // stable sort keeps server order for never-used classes
    });
    const needle = this.search.trim().toLowerCase();
    if (needle === "") return ordered;
    return ordered.filter(
      (c) =>
        c.name.toLowerCase().includes(needle) ||
        c.exemplarText.toLowerCase().includes(needle),
    );
  }

  private touchMru(classId: number): void {
    this.mru = [classId, ...this.mru.filter((id) => id !== classId)];
  }

  // --- decision flow -----------------------------------------------------

  decide(action: DecisionAction): Promise<void> {
    if (this.busy || this.card === null || this.sessionId === null) {
      return Promise.resolve();
    }
    return this.track(this.runDecide(action));
  }

  private async runDecide(action: DecisionAction): Promise<void> {
    const card = this.card as ClusterCard;
    const sessionId = this.sessionId as string;
    const snapshot: Snapshot = { card, phase: this.phase };
    const knownIds = new Set(this.classes.map((c) => c.classId));

    // Optimistic advance: clear the card right away, roll back on failure.
    this.busy = true;
    this.card = null;
    this.phase = "queue";
    this.banner = null;
    this.nameDraft = "";
    this.search = "";
    this.emit();

    try {
      const applied = await this.api.postDecision(sessionId, card.cursor, action);
      this.noteMutationVersion(applied.bankVersion, action.type === "skip" ? 0 : 1);
      if (action.type === "assign") this.touchMru(action.classId);
      await this.sync();
      if (action.type === "create") {
        for (const c of this.classes) {
          if (!knownIds.has(c.classId)) this.touchMru(c.classId);
        }
      }
    } catch (err) {
      this.card = snapshot.card;
      this.phase = snapshot.phase;
      if (err instanceof ApiError && err.conflict) {
        this.banner = { tone: "info", text: `decision rejected: ${err.detail}` };
        // Re-fetch the cursor cluster; the server moved without us.
        await this.sync().catch(() => undefined);
      } else {
        this.fail(err, () => this.decide(action));
      }
    } finally {
      this.busy = false;
      this.emit();
    }
  }

  skip(): Promise<void> {
    return this.decide({ type: "skip" });
  }

  assignSelected(): Promise<void> {
    const target = this.visibleClasses()[this.selected];
    if (target === undefined) return Promise.resolve();
    return this.decide({ type: "assign", classId: target.classId });
  }

  assignIndex(index: number): Promise<void> {
    const target = this.visibleClasses()[index];
    if (target === undefined) return Promise.resolve();
    return this.decide({ type: "assign", classId: target.classId });
  }

  confirmName(): Promise<void> {
    const name = this.nameDraft.trim();
    return this.decide(name === "" ? { type: "create" } : { type: "create", name });
  }

  // --- overlays ----------------------------------------------------------

  openAssign(): void {
    if (this.phase !== "queue" || this.card === null || this.classes.length === 0) return;
    this.phase = "pick-assign";
    this.search = "";
    this.selected = 0;
    this.emit();
  }

  openEdit(): void {
    if (this.phase !== "queue" || this.classes.length === 0) return;
    this.phase = "pick-edit";
    this.search = "";
    this.selected = 0;
    this.emit();
  }

  openNaming(): void {
    if (this.phase !== "queue" || this.card === null) return;
    this.phase = "naming";
    this.nameDraft = this.card.centroidText;
    this.emit();
  }

  cancelOverlay(): void {
    if (
      this.phase === "pick-assign" ||
      this.phase === "pick-edit" ||
      this.phase === "naming" ||
      this.phase === "edit"
    ) {
      // Cancel restores prior state; drafts are discarded untouched.
      this.phase = "queue";
      this.search = "";
      this.nameDraft = "";
      this.editDraft = "";
      this.editingClassId = null;
      this.emit();
    }
  }

  moveSelection(delta: number): void {
    const count = this.visibleClasses().length;
    if (count === 0) return;
    this.selected = Math.min(Math.max(this.selected + delta, 0), count - 1);
    this.emit();
  }

  setSearch(text: string): void {
    this.search = text;
    this.selected = 0;
    this.emit();
  }

  setNameDraft(text: string): void {
    this.nameDraft = text;
  }

  setEditDraft(text: string): void {
    this.editDraft = text;
  }

  pickSelected(): Promise<void> {
    if (this.phase === "pick-assign") return this.assignSelected();
    if (this.phase === "pick-edit") {
      const target = this.visibleClasses()[this.selected];
      if (target !== undefined) this.beginEdit(target.classId);
    }
    return Promise.resolve();
  }

  pickIndex(index: number): Promise<void> {
    if (this.phase === "pick-assign") return this.assignIndex(index);
    if (this.phase === "pick-edit") {
      const target = this.visibleClasses()[index];
      if (target !== undefined) this.beginEdit(target.classId);
    }
    return Promise.resolve();
  }

  // --- exemplar editor ---------------------------------------------------

  beginEdit(classId: number): void {
    const entry = this.classes.find((c) => c.classId === classId);
    if (entry === undefined) return;
    this.phase = "edit";
    this.editingClassId = classId;
    this.editDraft = entry.exemplarText;
    this.emit();
  }

  saveExemplar(): Promise<void> {
    if (this.busy || this.editingClassId === null) return Promise.resolve();
    const text = this.editDraft.trim();
    if (text === "") {
      // Blocked client-side; the request is never sent.
      this.banner = { tone: "error", text: "exemplar text must be non-empty" };
      this.emit();
      return Promise.resolve();
    }
    return this.track(this.runSaveExemplar(this.editingClassId, text));
  }

  private async runSaveExemplar(classId: number, text: string): Promise<void> {
    const entry = this.classes.find((c) => c.classId === classId);
    if (entry === undefined) return;
    const prior = entry.exemplarText;

    // Optimistic: show the new text immediately, roll back on error.
    entry.exemplarText = text;
    this.busy = true;
    this.phase = "queue";
    this.banner = null;
    this.editingClassId = null;
    this.editDraft = "";
    this.emit();

    try {
      const updated = await this.api.putExemplar(classId, text);
      this.noteMutationVersion(updated.bankVersion, 1);
    } catch (err) {
      entry.exemplarText = prior;
      this.fail(err, () => {
        this.beginEdit(classId);
        this.setEditDraft(text);
        return this.saveExemplar();
      });
    } finally {
      this.busy = false;
      this.emit();
    }
  }
}
