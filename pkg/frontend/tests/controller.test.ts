import { beforeEach, describe, expect, it } from "vitest";

import { memoryStore, ReviewController, SESSION_KEY, type KVStore } from "../src/state.js";
import { FakeMergeApi, makeClusters } from "./fake-api.js";

let api: FakeMergeApi;
let store: KVStore;
let controller: ReviewController;

beforeEach(() => {
  api = new FakeMergeApi(makeClusters(5));
  store = memoryStore();
  controller = new ReviewController(api, store);
});

describe("session start", () => {
  it("creates a session and mirrors the server card", async () => {
    await controller.start();
    expect(controller.phase).toBe("queue");
    expect(store.get(SESSION_KEY)).toBe("s1");
    const next = await api.nextCluster("s1");
    expect(controller.card).toEqual(next);
    expect(controller.summary?.clustersReviewed).toBe(0);
  });

  it("resumes a stored session at the server-side cursor", async () => {
    store.set(SESSION_KEY, "s1");
    api.cursor = 3;
    await controller.start();
    expect(api.createSessionCount).toBe(0);
    expect(controller.card?.cursor).toBe(3);
  });

  it("falls back to a fresh session when the stored one is gone", async () => {
    store.set(SESSION_KEY, "s9");
    await controller.start();
    expect(api.createSessionCount).toBe(1);
    expect(controller.phase).toBe("queue");
    expect(store.get(SESSION_KEY)).toBe("s1");
  });
});

describe("decision flow", () => {
  beforeEach(async () => {
    await controller.start();
  });

  it("skip advances without touching the class list", async () => {
    await controller.decide({ type: "create" });
    const before = controller.visibleClasses();
    await controller.skip();
    expect(controller.card?.cursor).toBe(2);
    expect(controller.visibleClasses()).toEqual(before);
    expect(controller.summary?.clustersReviewed).toBe(2);
  });

  it("create adds a class named after the centroid by default", async () => {
    const centroid = controller.card?.centroidText;
    await controller.decide({ type: "create" });
    expect(controller.classes).toHaveLength(1);
    expect(controller.classes[0]?.name).toBe(centroid);
    expect(controller.summary?.classesCreated).toBe(1);
    expect(controller.summary?.labeledCoverage).toBeGreaterThan(0);
  });

  it("assign grows the class and refreshes the picker from the server", async () => {
    await controller.decide({ type: "create" });
    const before = controller.classes[0]?.memberCount ?? 0;
    await controller.decide({ type: "assign", classId: 0 });
    expect(controller.classes[0]?.memberCount).toBeGreaterThan(before);
  });

  it("clears the card while the post is in flight", async () => {
    const release = api.holdNextPost();
    const pending = controller.skip();
    expect(controller.busy).toBe(true);
    expect(controller.card).toBeNull();
    release();
    await pending;
    expect(controller.busy).toBe(false);
    expect(controller.card?.cursor).toBe(1);
  });

  it("never issues concurrent decision posts", async () => {
    const release = api.holdNextPost();
    const first = controller.skip();
    const second = controller.skip();
    release();
    await Promise.all([first, second]);
    expect(api.calls.filter((c) => c.startsWith("postDecision"))).toHaveLength(1);
  });

  it("rolls back and re-syncs on a stale cursor", async () => {
    api.advanceExternally();
    await controller.skip();
    expect(controller.banner?.tone).toBe("info");
    expect(controller.banner?.text).toContain("stale cursor");
    // Re-fetched the cursor cluster: card mirrors the server again.
    expect(controller.card?.cursor).toBe(api.cursor);
    expect(controller.card).toEqual(await api.nextCluster("s1"));
  });

  it("restores the exact card on network failure and offers retry", async () => {
    const cardBefore = controller.card;
    api.failNext();
    await controller.skip();
    expect(controller.card).toEqual(cardBefore);
    expect(controller.banner?.tone).toBe("error");
    expect(api.cursor).toBe(0); // no divergence: the server never moved
    await controller.banner?.retry?.();
    await controller.settled();
    expect(controller.card?.cursor).toBe(1);
  });

  it("reaches the done phase after the last cluster", async () => {
    for (let i = 0; i < 5; i += 1) await controller.skip();
    expect(controller.phase).toBe("done");
    expect(controller.card).toBeNull();
    expect(controller.summary?.clustersReviewed).toBe(5);
  });
});

describe("class picker", () => {
  beforeEach(async () => {
    await controller.start();
    await controller.decide({ type: "create", name: "sleep advice" });
    await controller.decide({ type: "create", name: "greeting" });
    await controller.decide({ type: "create", name: "signoff" });
  });

  it("orders most-recently-used first", async () => {
    await controller.decide({ type: "assign", classId: 1 });
    expect(controller.visibleClasses().map((c) => c.name)).toEqual([
      "greeting",
      "signoff",
      "sleep advice",
    ]);
    await controller.decide({ type: "assign", classId: 2 });
    expect(controller.visibleClasses().map((c) => c.name)).toEqual([
      "signoff",
      "greeting",
      "sleep advice",
    ]);
  });

  it("puts a newly created class at the front", () => {
    expect(controller.visibleClasses()[0]?.name).toBe("signoff");
  });

  it("filters by case-insensitive substring over name and exemplar", () => {
    controller.setSearch("SLEEP");
    expect(controller.visibleClasses().map((c) => c.name)).toEqual(["sleep advice"]);
    controller.setSearch("centroid text number 1");
    expect(controller.visibleClasses().map((c) => c.name)).toEqual(["greeting"]);
    controller.setSearch("no such thing");
    expect(controller.visibleClasses()).toEqual([]);
  });

  it("clamps the selection to the filtered list", () => {
    controller.openAssign();
    controller.moveSelection(10);
    expect(controller.selected).toBe(2);
    controller.moveSelection(-10);
    expect(controller.selected).toBe(0);
  });

  it("assigns the selected class and returns to the queue", async () => {
    controller.openAssign();
    controller.moveSelection(1);
    await controller.pickSelected();
    expect(controller.phase).toBe("queue");
    expect(controller.classes.find((c) => c.name === "greeting")?.memberCount).toBe(4);
  });
});

describe("exemplar editor", () => {
  beforeEach(async () => {
    await controller.start();
    await controller.decide({ type: "create", name: "sleep advice" });
  });

  it("saves optimistically and records the version bump", async () => {
    controller.beginEdit(0);
    controller.setEditDraft("try to sleep 7 to 9 hours");
    await controller.saveExemplar();
    expect(controller.classes[0]?.exemplarText).toBe("try to sleep 7 to 9 hours");
    expect(controller.bankVersion).toBe(2);
    expect(controller.banner).toBeNull();
  });

  it("blocks empty text client-side without calling the server", async () => {
    controller.beginEdit(0);
    controller.setEditDraft("   ");
    const calls = api.calls.length;
    await controller.saveExemplar();
    expect(controller.phase).toBe("edit");
    expect(controller.banner?.text).toContain("non-empty");
    expect(api.calls.length).toBe(calls);
  });

  it("rolls back the text when the server rejects the edit", async () => {
    const prior = controller.classes[0]?.exemplarText;
    controller.beginEdit(0);
    controller.setEditDraft("new exemplar text");
    api.failNext();
    await controller.saveExemplar();
    expect(controller.classes[0]?.exemplarText).toBe(prior);
    expect(controller.banner?.tone).toBe("error");
  });

  it("cancel leaves the prior text untouched", () => {
    const prior = controller.classes[0]?.exemplarText;
    controller.beginEdit(0);
    controller.setEditDraft("scribbles");
    controller.cancelOverlay();
    expect(controller.classes[0]?.exemplarText).toBe(prior);
    expect(controller.phase).toBe("queue");
  });

  it("surfaces a concurrent edit through the version jump", async () => {
    expect(controller.bankVersion).toBe(1);
    api.bumpExternally();
    await controller.skip();
    expect(controller.banner?.tone).toBe("info");
    expect(controller.banner?.text).toContain("another client");
    expect(controller.bankVersion).toBe(2);
  });
});
