/**
 * Controller wiring state, view, keyboard and the service client.
 *
 * The loop is: lease a small batch, review it with the keyboard, lease
 * the next batch when it drains, stop at the empty-queue state.  The
 * client holds one focused item at a time; verdicts go out one by one
 * and the local view changes only on the server's answer.
 */

import { ApiClient } from "./api.js";
import type { VerdictStatus } from "./api.js";
import { translateKey } from "./keyboard.js";
import type { UiAction } from "./keyboard.js";
import { focusedItem, initialState, pickerSelection, reduce } from "./state.js";
import type { AppEvent, AppState } from "./state.js";
import { render } from "./view.js";

const BATCH_SIZE = 5;

export class ReviewApp {
  state: AppState = initialState();

  constructor(private root: HTMLElement, private api: ApiClient) {}

  private dispatch(event: AppEvent): void {
    this.state = reduce(this.state, event);
    render(this.root, this.state, this.api);
  }

  async start(): Promise<void> {
    render(this.root, this.state, this.api);
    await this.loadVocabularies();
    await this.refresh();
  }

  /** Lease the next batch; flips to the done state on an empty queue. */
  async refresh(): Promise<void> {
    try {
      const items = await this.api.nextItems(BATCH_SIZE);
      const counts = await this.api.counts();
      this.dispatch({ kind: "queue", items, counts });
    } catch (error) {
      this.dispatch({ kind: "fetch_failed", message: String(error) });
    }
  }

  private async loadVocabularies(): Promise<void> {
    try {
      const vocabularies = await this.api.vocabularies();
      this.dispatch({ kind: "vocabulary", vocabularies });
    } catch (error) {
      this.dispatch({ kind: "fetch_failed", message: String(error) });
    }
  }

  async submit(status: VerdictStatus, verdictLabel?: string): Promise<void> {
    const item = focusedItem(this.state);
    if (item === null || this.state.busy) return;
    this.dispatch({ kind: "submit_started" });
    try {
      const outcome = await this.api.submitVerdict(item.id, status, verdictLabel);
      if (outcome.kind === "ok") {
        this.dispatch({ kind: "resolved", itemId: item.id });
      } else if (outcome.kind === "conflict") {
        this.dispatch({ kind: "conflict", itemId: item.id, item: outcome.item });
      } else {
        this.dispatch({ kind: "invalid", message: outcome.message });
      }
    } catch (error) {
      this.dispatch({ kind: "fetch_failed", message: String(error) });
      return;
    }
    if (this.state.items.length === 0 && this.state.phase === "loading") {
      await this.refresh();
    }
  }

  async handleAction(action: UiAction): Promise<void> {
    switch (action.kind) {
      case "accept":
        await this.submit("accepted");
        break;
      case "reject":
        await this.submit("rejected");
        break;
      case "open_picker":
        this.dispatch({ kind: "picker_open" });
        break;
      case "move":
        this.dispatch({ kind: "focus_move", delta: action.delta });
        break;
      case "retry":
        await this.refresh();
        break;
      case "picker_input":
        this.dispatch({ kind: "picker_query", query: action.query });
        break;
      case "picker_move":
        this.dispatch({ kind: "picker_move", delta: action.delta });
        break;
      case "picker_confirm": {
        const selection = pickerSelection(this.state);
        if (selection !== null) await this.submit("relabeled", selection);
        break;
      }
      case "picker_cancel":
        this.dispatch({ kind: "picker_close" });
        break;
    }
  }

  handleKey(event: KeyboardEvent): Promise<void> {
    const action = translateKey(event, {
      pickerOpen: this.state.picker !== null,
      pickerQuery: this.state.picker?.query ?? "",
      busy: this.state.busy,
    });
    if (action === null) return Promise.resolve();
    event.preventDefault();
    return this.handleAction(action);
  }
}

export function mount(root: HTMLElement, baseUrl: string, annotator: string): ReviewApp {
  const app = new ReviewApp(root, new ApiClient(baseUrl, annotator));
  window.addEventListener("keydown", (event) => {
    void app.handleKey(event);
  });
  root.addEventListener("click", (event) => {
    const target = event.target as HTMLElement | null;
    if (target?.dataset.action === "retry") void app.handleAction({ kind: "retry" });
  });
  void app.start();
  return app;
}
