/**
 * Session state machine for one annotator, independent of the DOM.
 *
 * The server's label log is append-only with latest-wins semantics, so the
 * local effective view mirrors exactly what the server would answer: a
 * submit overwrites, and undo re-posts the prior effective label when the
 * session knows one. When the undone submission was the first label for an
 * item, nothing can erase it server-side; the item is re-presented and the
 * next submission overwrites it.
 *
 * Failed posts are buffered and retried; the session refuses to advance
 * once more than `maxUnsynced` events are waiting.
 */
import { ApiClient, LabelPost, LabelValue, QueueItem } from './api.js';

export interface UndoEntry {
  imageId: string;
  label: LabelValue;
  prior?: LabelValue;
  itemIndex: number;
}

export class SyncBlockedError extends Error {
  constructor(pending: number) {
    super(`cannot advance: ${pending} unsynced label events`);
  }
}

/** Topic categories for the per-account review pass. */
export const TOPICS = ['Politics', 'Finance', 'Business', 'Sex', 'Other'] as const;
export type Topic = (typeof TOPICS)[number];

export class LabelingSession {
  items: QueueItem[] = [];
  position = 0;
  effective = new Map<string, LabelValue>();
  unsynced: LabelPost[] = [];
  topics = new Map<string, Topic>();
  private undoEntry?: UndoEntry;
  private exhausted = false;

  constructor(
    private api: ApiClient,
    readonly annotatorId: string,
    private queueBatch = 25,
    readonly maxUnsynced = 10,
  ) {}

  async start(): Promise<void> {
    await this.refill();
  }

  private async refill(): Promise<void> {
    if (this.exhausted) return;
    const batch = await this.api.queue(this.queueBatch);
    const known = new Set(this.items.map((i) => i.image_id));
    const fresh = batch.filter(
      (i) => !known.has(i.image_id) && !this.effective.has(i.image_id),
    );
    if (fresh.length === 0) this.exhausted = true;
    this.items.push(...fresh);
  }

  current(): QueueItem | undefined {
    return this.items[this.position];
  }

  get done(): boolean {
    return this.position >= this.items.length && this.exhausted;
  }

  /** Per-label counts of the session's effective view. */
  tallies(): Record<string, number> {
    const out: Record<string, number> = {};
    for (const label of this.effective.values()) {
      out[label] = (out[label] ?? 0) + 1;
    }
    return out;
  }

  get labeledCount(): number {
    return this.effective.size;
  }

  private async post(body: LabelPost): Promise<void> {
    try {
      await this.api.submitLabel(body);
    } catch {
      this.unsynced.push(body);
    }
  }

  /** Re-send buffered events in order; stops at the first failure. */
  async retryUnsynced(): Promise<void> {
    while (this.unsynced.length > 0) {
      const body = this.unsynced[0];
      try {
        await this.api.submitLabel(body);
      } catch {
        return;
      }
      this.unsynced.shift();
    }
  }

  async submit(label: LabelValue): Promise<void> {
    const item = this.current();
    if (!item) throw new Error('no current item to label');
    if (this.unsynced.length >= this.maxUnsynced) {
      await this.retryUnsynced();
      if (this.unsynced.length >= this.maxUnsynced) {
        throw new SyncBlockedError(this.unsynced.length);
      }
    }
    const prior = this.effective.get(item.image_id);
    this.undoEntry = {
      imageId: item.image_id,
      label,
      prior,
      itemIndex: this.position,
    };
    this.effective.set(item.image_id, label);
    await this.post({
      image_id: item.image_id,
      annotator_id: this.annotatorId,
      label,
      assist_seen: {
        alignment: item.aligned,
        inversion_composite: item.has_composite,
      },
    });
    this.position += 1;
    if (this.position >= this.items.length) {
      await this.refill();
    }
  }

  /**
   * Topic tags are a local review aid (the service keeps no topic state),
   * exported as CSV when the session finishes.
   */
  setTopic(imageId: string, topic: Topic): void {
    this.topics.set(imageId, topic);
  }

  topicsCsv(): string {
    const lines = ['image_id,topic'];
    for (const [imageId, topic] of [...this.topics.entries()].sort()) {
      lines.push(`${imageId},${topic}`);
    }
    return lines.join('\n') + '\n';
  }

  get canUndo(): boolean {
    return this.undoEntry !== undefined;
  }

  /**
   * Single-step undo: rewind to the undone item; when a prior effective
   * label exists, re-post it so the server view matches again.
   */
  async undo(): Promise<void> {
    const entry = this.undoEntry;
    if (!entry) return;
    this.undoEntry = undefined;
    this.position = entry.itemIndex;
    if (entry.prior !== undefined) {
      const item = this.items[entry.itemIndex];
      this.effective.set(entry.imageId, entry.prior);
      await this.post({
        image_id: entry.imageId,
        annotator_id: this.annotatorId,
        label: entry.prior,
        assist_seen: {
          alignment: item.aligned,
          inversion_composite: item.has_composite,
        },
      });
    }
    // No prior: the appended event stays effective server-side until the
    // re-presented item is labeled again, so the local view keeps it too.
  }
}
