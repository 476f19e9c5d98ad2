/** Bootstrap: wire the store to the page and re-render on every change.
 *
 * The API base defaults to the page's own origin (the service can mount the
 * built assets under /ui) and can be overridden with ?api=http://host:port.
 */

import { TrainerApi } from "./api.js";
import { TrainerStore } from "./state.js";
import { Handlers, renderChat, renderMetricsDashboard, renderSceneList } from "./view.js";

function apiBase(): string {
  const override = new URLSearchParams(window.location.search).get("api");
  return override ?? window.location.origin;
}

export function mount(root: HTMLElement, store: TrainerStore): void {
  const handlers: Handlers = {
    onSelectScene: (sceneId) => void store.startTraining(sceneId),
    onComposerInput: (text) => store.setComposer(text),
    onSend: () => void store.sendMessage(),
    onRetry: () => void store.retrySend(),
    onHint: () => void store.requestHint(),
    onQuit: () => void store.quitSession(),
    onTrainerModeToggle: (on) => store.setTrainerMode(on),
  };

  const render = () => {
    const state = store.state;
    root.replaceChildren();
    if (window.location.hash === "#metrics") {
      root.appendChild(renderMetricsDashboard(state.metrics, state.metricsError));
    } else if (state.sessionId) {
      root.appendChild(renderChat(state, handlers));
    } else {
      root.appendChild(renderSceneList(state.scenes, state.sceneError, handlers));
    }
  };

  store.subscribe(render);
  window.addEventListener("hashchange", () => {
    if (window.location.hash === "#metrics") {
      void store.loadMetrics();
    }
    render();
  });
  render();
  void store.loadScenes();
  if (window.location.hash === "#metrics") {
    void store.loadMetrics();
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const store = new TrainerStore(new TrainerApi(apiBase()));
  mount(document.getElementById("app") as HTMLElement, store);
}
