/**
 * Typed client for the merge-review service.
 * Consumes only the /v1/sessions and /v1/bank endpoints; every response is
 * validated against a zod schema so contract drift fails loudly.
 */

import { z } from "zod";

export const classSummarySchema = z.object({
  classId: z.number().int(),
  name: z.string(),
  exemplarText: z.string(),
  memberCount: z.number().int(),
});

/** Mirrors GET /v1/sessions/{id}/next exactly; never mutated locally. */
export const clusterCardSchema = z.object({
  done: z.literal(false),
  clusterId: z.number().int(),
  centroidText: z.string(),
  occurrenceCount: z.number().int(),
  sampleMembers: z.array(z.string()),
  existingClasses: z.array(classSummarySchema),
  cursor: z.number().int(),
  queueLength: z.number().int(),
});

export const queueDoneSchema = z.object({
  done: z.literal(true),
  cursor: z.number().int(),
  queueLength: z.number().int(),
});

export const nextResponseSchema = z.discriminatedUnion("done", [
  clusterCardSchema,
  queueDoneSchema,
]);

export const sessionCreatedSchema = z.object({
  sessionId: z.string(),
  queueLength: z.number().int(),
  cursor: z.number().int(),
  bankVersion: z.number().int(),
});

export const decisionAppliedSchema = z.object({
  applied: z.literal(true),
  cursor: z.number().int(),
  done: z.boolean(),
  bankVersion: z.number().int(),
});

export const sessionSummarySchema = z.object({
  classesCreated: z.number().int(),
  clustersReviewed: z.number().int(),
  queueLength: z.number().int(),
  labeledCoverage: z.number(),
  bankVersion: z.number().int(),
});

export const bankClassSchema = z.object({
  classId: z.number().int(),
  name: z.string(),
  exemplarText: z.string(),
  members: z.array(z.number().int()),
  sourceClusters: z.array(z.number().int()),
});

export const bankSchema = z.object({
  version: z.number().int(),
  classes: z.array(bankClassSchema),
});

export const exemplarUpdatedSchema = z.object({
  classId: z.number().int(),
  exemplarText: z.string(),
  bankVersion: z.number().int(),
});

export type ClassSummary = z.infer<typeof classSummarySchema>;
export type ClusterCard = z.infer<typeof clusterCardSchema>;
export type QueueDone = z.infer<typeof queueDoneSchema>;
export type NextResponse = z.infer<typeof nextResponseSchema>;
export type SessionCreated = z.infer<typeof sessionCreatedSchema>;
export type DecisionApplied = z.infer<typeof decisionAppliedSchema>;
export type SessionSummary = z.infer<typeof sessionSummarySchema>;
export type Bank = z.infer<typeof bankSchema>;
export type ExemplarUpdated = z.infer<typeof exemplarUpdatedSchema>;

export type DecisionAction =
  | { type: "assign"; classId: number }
  | { type: "create"; name?: string }
  | { type: "skip" };

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly detail: string,
  ) {
    super(status === 0 ? detail : `HTTP ${status}: ${detail}`);
    this.name = "ApiError";
  }

  /** Stale-cursor or otherwise conflicting mutation. */
  get conflict(): boolean {
    return this.status === 409;
  }

  /** Request never reached the server (or the response never arrived). */
  get network(): boolean {
    return this.status === 0;
  }
}

/** The full surface the UI is allowed to touch. */
export interface MergeApi {
  createSession(): Promise<SessionCreated>;
  nextCluster(sessionId: string): Promise<NextResponse>;
  postDecision(
    sessionId: string,
    cursor: number,
    action: DecisionAction,
  ): Promise<DecisionApplied>;
  getSummary(sessionId: string): Promise<SessionSummary>;
  getBank(): Promise<Bank>;
  putExemplar(classId: number, exemplarText: string): Promise<ExemplarUpdated>;
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient implements MergeApi {
  private readonly fetchImpl: FetchLike;

  constructor(
    private readonly baseUrl = "",
    fetchImpl?: FetchLike,
  ) {
    // Wrap so the default keeps its original `this` binding in browsers.
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(
    schema: z.ZodType<T>,
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, {
        method,
        headers: body === undefined ? undefined : { "Content-Type": "application/json" },
        body: body === undefined ? undefined : JSON.stringify(body),
      });
    } catch (err) {
      throw new ApiError(0, `network failure: ${err instanceof Error ? err.message : err}`);
    }
    const payload: unknown = await response.json().catch(() => ({}));
    if (!response.ok) {
      const detail =
        typeof payload === "object" && payload !== null && "detail" in payload
          ? String((payload as { detail: unknown }).detail)
          : response.statusText;
      throw new ApiError(response.status, detail);
    }
    return schema.parse(payload);
  }

  createSession(): Promise<SessionCreated> {
    return this.request(sessionCreatedSchema, "POST", "/v1/sessions");
  }

  nextCluster(sessionId: string): Promise<NextResponse> {
    return this.request(nextResponseSchema, "GET", `/v1/sessions/${sessionId}/next`);
  }

  postDecision(
    sessionId: string,
    cursor: number,
    action: DecisionAction,
  ): Promise<DecisionApplied> {
    return this.request(decisionAppliedSchema, "POST", `/v1/sessions/${sessionId}/decisions`, {
      cursor,
      action,
    });
  }

  getSummary(sessionId: string): Promise<SessionSummary> {
    return this.request(sessionSummarySchema, "GET", `/v1/sessions/${sessionId}/summary`);
  }

  getBank(): Promise<Bank> {
    return this.request(bankSchema, "GET", "/v1/bank");
  }

  putExemplar(classId: number, exemplarText: string): Promise<ExemplarUpdated> {
    return this.request(exemplarUpdatedSchema, "PUT", `/v1/bank/classes/${classId}/exemplar`, {
      exemplarText,
    });
  }
}
