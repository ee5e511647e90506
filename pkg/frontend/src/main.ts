import { ApiClient } from './api.js';
import { LabelingSession } from './session.js';
import { ConsoleUI } from './ui.js';

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const annotator =
    params.get('annotator') ?? window.prompt('annotator id?') ?? 'anonymous';
  const api = new ApiClient('');
  const session = new LabelingSession(api, annotator);
  const ui = new ConsoleUI(document.getElementById('app')!, api, session);
  ui.bindKeys();
  await session.start();
  await ui.render();
}

boot();
