/**
 * Typed client for the labeling service HTTP API.
 *
 * Every displayed value (score, alignment, composite distances) comes from
 * these endpoints; the console never computes any of them itself.
 */

export type LabelValue = 'REAL' | 'FAKE' | 'UNSURE';

export interface QueueItem {
  image_id: string;
  score: number;
  aligned: boolean;
  has_composite: boolean;
}

export interface Progress {
  labeled: number;
  remaining: number;
  per_label_counts: Record<string, number>;
}

export interface LabelPost {
  image_id: string;
  annotator_id: string;
  label: LabelValue;
  /** Which assistance the annotator had in view for this decision. */
  assist_seen: { alignment: boolean; inversion_composite: boolean };
}

export interface CalibrationView {
  calibration: { threshold: number; f1: number; precision: number; recall: number; auc: number };
  errors: { fnr: number; fdr: number } | null;
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string = '',
    private fetchFn: typeof fetch = globalThis.fetch.bind(globalThis),
  ) {}

  private async getJson<T>(path: string): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path);
    if (!response.ok) {
      throw new ApiError(response.status, `GET ${path} -> ${response.status}`);
    }
    return (await response.json()) as T;
  }

  queue(n: number): Promise<QueueItem[]> {
    return this.getJson<QueueItem[]>(`/api/queue?n=${n}`);
  }

  progress(): Promise<Progress> {
    return this.getJson<Progress>('/api/progress');
  }

  calibration(): Promise<CalibrationView> {
    return this.getJson<CalibrationView>('/api/calibration');
  }

  async submitLabel(body: LabelPost): Promise<void> {
    const response = await this.fetchFn(this.baseUrl + '/api/labels', {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify(body),
    });
    if (!response.ok) {
      throw new ApiError(response.status, `POST /api/labels -> ${response.status}`);
    }
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/api/images/${imageId}`;
  }

  compositeUrl(imageId: string): string {
    return `${this.baseUrl}/api/images/${imageId}/composite`;
  }

  /** Composite bytes plus the distance headers, fetched lazily on focus. */
  async composite(imageId: string): Promise<{ blob: Blob; lpips: string; mse: string } | null> {
    const response = await this.fetchFn(this.compositeUrl(imageId));
    if (response.status === 404) return null;
    if (!response.ok) {
      throw new ApiError(response.status, `composite ${imageId} -> ${response.status}`);
    }
    return {
      blob: await response.blob(),
      lpips: response.headers.get('X-LPIPS') ?? '',
      mse: response.headers.get('X-MSE') ?? '',
    };
  }
}
