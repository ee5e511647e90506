/**
 * DOM rendering for the labeling console. Keyboard-first: R / F / U label
 * the current item, Z undoes the last submission.
 *
 * Layout per item: the original profile image, or a side-by-side composite
 * (original + generator reconstruction + LPIPS/MSE) when the service has
 * one; an alignment badge; and a static checklist of the visual cues used
 * for manual labeling. Composites are fetched lazily when the item gains
 * focus because inversion may still be running server-side.
 */
import { ApiClient } from './api.js';
import { LabelingSession, SyncBlockedError, TOPICS, Topic } from './session.js';

const CHECKLIST_FAKE = [
  'diffuse or smeared background',
  'asymmetries: eyes, earrings, glasses',
  'unnatural clothing or collar',
  'color artifacts at the frame edge',
  'near-perfect reconstruction',
];
const CHECKLIST_REAL = [
  'framing/pose unlike generator output',
  'complex, meaningful background',
  'reconstruction deviates clearly',
];

export class ConsoleUI {
  private root: HTMLElement;

  constructor(
    root: HTMLElement,
    private api: ApiClient,
    private session: LabelingSession,
  ) {
    this.root = root;
  }

  bindKeys(target: GlobalEventHandlers = window): void {
    target.onkeydown = (event: KeyboardEvent) => {
      const key = event.key.toLowerCase();
      if (key === 'r') this.label('REAL');
      else if (key === 'f') this.label('FAKE');
      else if (key === 'u') this.label('UNSURE');
      else if (key === 'z') this.undo();
    };
  }

  async label(value: 'REAL' | 'FAKE' | 'UNSURE'): Promise<void> {
    try {
      await this.session.submit(value);
    } catch (err) {
      if (err instanceof SyncBlockedError) {
        this.renderSyncBlocked();
        return;
      }
      throw err;
    }
    await this.render();
  }

  async undo(): Promise<void> {
    await this.session.undo();
    await this.render();
  }

  async render(): Promise<void> {
    const item = this.session.current();
    if (!item) {
      this.renderDone();
      return;
    }
    const labeled = this.session.labeledCount;
    const remaining = this.session.items.length - this.session.position;
    this.root.innerHTML = `
      <header>
        <span class="position">#${this.session.position + 1}</span>
        <span class="remaining">${remaining} in queue, ${labeled} labeled</span>
        <span class="score">score ${item.score.toFixed(6)}</span>
        <span class="badge ${item.aligned ? 'aligned' : 'misaligned'}">
          ${item.aligned ? 'aligned' : 'not aligned'}
        </span>
      </header>
      <main id="panel"></main>
      <aside>
        <h3>fake cues</h3>
        <ul>${CHECKLIST_FAKE.map((c) => `<li>${c}</li>`).join('')}</ul>
        <h3>real cues</h3>
        <ul>${CHECKLIST_REAL.map((c) => `<li>${c}</li>`).join('')}</ul>
      </aside>
      <footer>
        <button data-key="r">Real (R)</button>
        <button data-key="f">Fake (F)</button>
        <button data-key="u">Unsure (U)</button>
        <button data-key="z" ${this.session.canUndo ? '' : 'disabled'}>Undo (Z)</button>
        <label class="topic">topic
          <select id="topic">
            <option value="">–</option>
            ${TOPICS.map(
              (t) =>
                `<option value="${t}" ${
                  this.session.topics.get(item.image_id) === t ? 'selected' : ''
                }>${t}</option>`,
            ).join('')}
          </select>
        </label>
        <span class="unsynced">${
          this.session.unsynced.length
            ? `${this.session.unsynced.length} unsynced`
            : ''
        }</span>
      </footer>`;
    const topicSelect = this.root.querySelector('#topic') as HTMLSelectElement;
    topicSelect.onchange = () => {
      if (topicSelect.value) {
        this.session.setTopic(item.image_id, topicSelect.value as Topic);
      }
    };
    this.root.querySelectorAll('button[data-key]').forEach((button) => {
      (button as HTMLButtonElement).onclick = () => {
        const key = (button as HTMLButtonElement).dataset.key!;
        if (key === 'z') this.undo();
        else this.label(key === 'r' ? 'REAL' : key === 'f' ? 'FAKE' : 'UNSURE');
      };
    });
    await this.renderPanel(item.image_id, item.aligned, item.has_composite);
  }

  private async renderPanel(
    imageId: string,
    aligned: boolean,
    hasComposite: boolean,
  ): Promise<void> {
    const panel = this.root.querySelector('#panel') as HTMLElement;
    if (!panel) return;
    const showOriginal = () => {
      panel.innerHTML = `<img class="original" alt="profile image" src="${this.api.imageUrl(
        imageId,
      )}">`;
      if (aligned && !hasComposite) {
        panel.innerHTML += '<p class="pending">reconstruction pending</p>';
      }
      const img = panel.querySelector('img') as HTMLImageElement;
      img.onerror = () => {
        panel.innerHTML = `<p class="error">image failed to load</p>
          <button id="retry">Retry</button>`;
        (panel.querySelector('#retry') as HTMLButtonElement).onclick = showOriginal;
      };
    };
    if (!hasComposite) {
      showOriginal();
      return;
    }
    try {
      const composite = await this.api.composite(imageId);
      if (!composite) {
        showOriginal();
        return;
      }
      const url = URL.createObjectURL(composite.blob);
      panel.innerHTML = `
        <img class="composite" alt="original and reconstruction" src="${url}">
        <p class="distances">LPIPS ${composite.lpips} &middot; MSE ${composite.mse}</p>`;
    } catch {
      panel.innerHTML = `<p class="error">composite failed to load</p>
        <button id="retry">Retry</button>`;
      (panel.querySelector('#retry') as HTMLButtonElement).onclick = () =>
        this.renderPanel(imageId, aligned, hasComposite);
    }
  }

  private renderSyncBlocked(): void {
    const notice = document.createElement('p');
    notice.className = 'sync-blocked';
    notice.textContent = `${this.session.unsynced.length} label events are unsynced; retrying before advancing.`;
    this.root.prepend(notice);
    this.session.retryUnsynced().then(() => this.render());
  }

  private renderDone(): void {
    const tallies = this.session.tallies();
    const rows = Object.entries(tallies)
      .sort()
      .map(([label, count]) => `<tr><td>${label}</td><td>${count}</td></tr>`)
      .join('');
    this.root.innerHTML = `
      <section class="done">
        <h2>Queue complete</h2>
        <table>${rows}</table>
        <p>${this.session.labeledCount} items labeled.</p>
        ${
          this.session.topics.size
            ? '<button id="topics-csv">Download topic CSV</button>'
            : ''
        }
      </section>`;
    const download = this.root.querySelector('#topics-csv') as HTMLButtonElement | null;
    if (download) {
      download.onclick = () => {
        const blob = new Blob([this.session.topicsCsv()], { type: 'text/csv' });
        const anchor = document.createElement('a');
        anchor.href = URL.createObjectURL(blob);
        anchor.download = 'topics.csv';
        anchor.click();
      };
    }
  }
}
