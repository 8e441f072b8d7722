/**
 * Typed client for the review endpoints of the mmcr service.
 *
 * Every method resolves with a discriminated result rather than throwing
 * on expected service responses (409 conflict, 422 validation); only
 * transport failures and unexpected statuses reject, and the controller
 * turns those into the retry banner.
 */

export interface ReviewItemDoc {
  id: string;
  recordId: string;
  path: string;
  proposedLabel: string | null;
  granularity: string;
  outlierScore: number;
  status: string;
  verdictLabel: string | null;
  annotator: string | null;
  timestamp: string;
  imageUrl: string;
}

export interface QueueCounts {
  pending: number;
  total: number;
}

export type VerdictStatus = "accepted" | "rejected" | "relabeled";

export type VerdictOutcome =
  | { kind: "ok"; item: ReviewItemDoc }
  | { kind: "conflict"; item: ReviewItemDoc }
  | { kind: "invalid"; message: string };

interface ErrorBody {
  error?: { code?: string; message?: string };
  item?: ReviewItemDoc;
}

export class ApiClient {
  constructor(readonly baseUrl: string, readonly annotator: string) {}

  private url(path: string): string {
    return this.baseUrl.replace(/\/$/, "") + path;
  }

  imageUrl(item: ReviewItemDoc): string {
    return this.url(item.imageUrl);
  }

  async counts(): Promise<QueueCounts> {
    const response = await fetch(this.url("/v1/health"));
    if (!response.ok) throw new Error(`health returned ${response.status}`);
    const body = await response.json();
    if (!body.queue) throw new Error("service has no review queue configured");
    return { pending: body.queue.pending, total: body.queue.total };
  }

  async nextItems(count: number): Promise<ReviewItemDoc[]> {
    const response = await fetch(this.url(`/v1/review/next?count=${count}`));
    if (!response.ok) throw new Error(`review/next returned ${response.status}`);
    const body = await response.json();
    return body.items as ReviewItemDoc[];
  }

  async vocabularies(): Promise<Record<string, string[]>> {
    const response = await fetch(this.url("/v1/review/vocabulary"));
    if (!response.ok) throw new Error(`vocabulary returned ${response.status}`);
    const body = await response.json();
    const out: Record<string, string[]> = {};
    for (const [granularity, payload] of Object.entries(body.vocabularies ?? {})) {
      out[granularity] = (payload as { classes: string[] }).classes;
    }
    return out;
  }

  async submitVerdict(itemId: string, status: VerdictStatus,
                      verdictLabel?: string): Promise<VerdictOutcome> {
    const response = await fetch(this.url(`/v1/review/${itemId}/verdict`), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        status,
        annotator: this.annotator,
        ...(verdictLabel !== undefined ? { verdict_label: verdictLabel } : {}),
      }),
    });
    const body = (await response.json()) as ErrorBody & { item?: ReviewItemDoc };
    if (response.status === 200 && body.item) {
      return { kind: "ok", item: body.item };
    }
    if (response.status === 409 && body.item) {
      return { kind: "conflict", item: body.item };
    }
    if (response.status === 422) {
      return { kind: "invalid", message: body.error?.message ?? "verdict rejected" };
    }
    throw new Error(`verdict returned ${response.status}`);
  }
}
