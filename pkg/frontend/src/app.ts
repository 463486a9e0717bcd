import { ApiClient, ApiError } from "./api.js";
import { Selection, actionForKey, applyAction, progressPercent, progressSummary } from "./state.js";
import type { HallucType, SampleView } from "./types.js";

const api = new ApiClient();
const selection = new Selection();
let current: SampleView | null = null;

const el = {
  response: document.getElementById("response") as HTMLElement,
  sampleId: document.getElementById("sample-id") as HTMLElement,
  prompt: document.getElementById("prompt") as HTMLElement,
  audio: document.getElementById("audio") as HTMLAudioElement,
  yes: document.getElementById("btn-yes") as HTMLButtonElement,
  no: document.getElementById("btn-no") as HTMLButtonElement,
  types: Array.from(
    document.querySelectorAll<HTMLButtonElement>("button[data-type]"),
  ),
  submit: document.getElementById("btn-submit") as HTMLButtonElement,
  replay: document.getElementById("btn-replay") as HTMLButtonElement,
  error: document.getElementById("error") as HTMLElement,
  progressBar: document.getElementById("progress-bar") as HTMLElement,
  progressText: document.getElementById("progress-text") as HTMLElement,
  done: document.getElementById("done") as HTMLElement,
  card: document.getElementById("card") as HTMLElement,
};

function render(): void {
  el.yes.classList.toggle("active", selection.hallucinated === true);
  el.no.classList.toggle("active", selection.hallucinated === false);
  const typesEnabled = selection.typeSelectorEnabled();
  for (const button of el.types) {
    button.disabled = !typesEnabled;
    button.classList.toggle(
      "active",
      typesEnabled && selection.hallucType === (button.dataset.type as HallucType),
    );
  }
  el.submit.disabled = !selection.canSubmit();
}

function showError(message: string): void {
  el.error.textContent = message;
  el.error.hidden = false;
}

function clearError(): void {
  el.error.hidden = true;
  el.error.textContent = "";
}

async function refreshProgress(): Promise<void> {
  const progress = await api.progress();
  el.progressBar.style.width = `${progressPercent(progress.labeled, progress.total)}%`;
  el.progressText.textContent = progressSummary(
    progress.labeled,
    progress.total,
    progress.rate,
  );
}

function showSample(sample: SampleView): void {
  current = sample;
  selection.reset();
  el.sampleId.textContent = sample.id;
  el.prompt.textContent = sample.prompt;
  el.response.textContent = sample.response;
  el.audio.src = api.audioUrl(sample.id);
  el.card.hidden = false;
  el.done.hidden = true;
  clearError();
  render();
  void el.audio.play().catch(() => {
    // autoplay may be blocked; the annotator can press play/replay
  });
}

async function loadNext(after?: string): Promise<void> {
  const next = await api.nextSample(after);
  if (next.sample) {
    showSample(next.sample);
  } else {
    current = null;
    el.card.hidden = true;
    el.done.hidden = false;
    el.done.textContent = next.done
      ? "All samples are labeled. Thank you!"
      : "No unlabeled samples after this point; reload to start from the top.";
  }
}

async function submit(): Promise<void> {
  if (!current || !selection.canSubmit()) return;
  try {
    await api.putAnnotation(current.id, selection.buildPayload());
    clearError();
    await refreshProgress();
    await loadNext(current.id);
  } catch (err) {
    // keep the sample and audio position; surface the rejection inline
    if (err instanceof ApiError) {
      showError(`Server rejected the annotation: ${err.detail}`);
    } else {
      showError(`Network error: ${String(err)}`);
    }
  }
}

function replay(): void {
  el.audio.currentTime = 0;
  void el.audio.play().catch(() => undefined);
}

function onKeydown(event: KeyboardEvent): void {
  const target = event.target as HTMLElement | null;
  if (target && (target.tagName === "INPUT" || target.tagName === "TEXTAREA")) {
    return;
  }
  const action = actionForKey(event.key);
  if (action.kind === "none") return;
  event.preventDefault();
  if (action.kind === "submit") {
    void submit();
  } else if (action.kind === "replay") {
    replay();
  } else {
    applyAction(selection, action);
    render();
  }
}

function wire(): void {
  el.yes.addEventListener("click", () => {
    selection.markHallucinated(true);
    render();
  });
  el.no.addEventListener("click", () => {
    selection.markHallucinated(false);
    render();
  });
  for (const button of el.types) {
    button.addEventListener("click", () => {
      selection.chooseType(button.dataset.type as HallucType);
      render();
    });
  }
  el.submit.addEventListener("click", () => void submit());
  el.replay.addEventListener("click", replay);
  document.addEventListener("keydown", onKeydown);
}

async function start(): Promise<void> {
  wire();
  try {
    await refreshProgress();
    await loadNext();
  } catch (err) {
    showError(`Could not reach the annotation service: ${String(err)}`);
  }
}

void start();
