/**
 * DOM rendering: one render(root, state) pass per state change.
 *
 * Rendering is replace-everything; at review-queue scale (a handful of
 * cards) diffing buys nothing.  All interactive elements carry data-action
 * attributes so the controller can delegate clicks without per-node
 * listeners surviving across renders.
 */

import type { ApiClient } from "./api.js";
import type { AppState } from "./state.js";
import { focusedItem, pickerMatches, resolvedCount } from "./state.js";

function el(tag: string, className?: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderBanner(state: AppState): HTMLElement | null {
  if (state.phase !== "error") return null;
  const banner = el("div", "banner banner-error");
  banner.append(
    el("span", "banner-text", `Service unreachable: ${state.errorMessage ?? "unknown error"}`),
  );
  const retry = el("button", "retry-button", "Retry") as HTMLButtonElement;
  retry.dataset.action = "retry";
  banner.append(retry);
  return banner;
}

function renderCounter(state: AppState): HTMLElement {
  const resolved = resolvedCount(state);
  const text = resolved === null || state.total === null
    ? "queue size unknown"
    : `${resolved} of ${state.total} resolved`;
  const counter = el("div", "progress-counter", text);
  counter.dataset.role = "counter";
  return counter;
}

function renderConflict(state: AppState): HTMLElement | null {
  if (state.conflict === null) return null;
  const item = state.conflict;
  const label = item.verdictLabel !== null ? ` as ${item.verdictLabel}` : "";
  const who = item.annotator ?? "another annotator";
  return el("div", "banner banner-conflict",
            `Already resolved by ${who}: ${item.status}${label} (${item.recordId})`);
}

function renderNotice(state: AppState): HTMLElement | null {
  if (state.notice === null) return null;
  const notice = el("div", "banner banner-notice", state.notice);
  notice.dataset.role = "notice";
  return notice;
}

function renderCard(state: AppState, api: ApiClient, index: number): HTMLElement {
  const item = state.items[index];
  const card = el("article", index === state.focus ? "card card-focused" : "card");
  card.dataset.itemId = item.id;

  const image = el("img", "card-image") as HTMLImageElement;
  image.src = api.imageUrl(item);
  image.alt = item.recordId;
  card.append(image);

  const body = el("div", "card-body");
  body.append(el("div", "card-record", item.recordId));
  body.append(el("div", "card-label", `proposed: ${item.proposedLabel ?? "(none)"}`));
  const score = el("div", "card-score", `outlier score ${item.outlierScore}`);
  score.dataset.role = "score";
  body.append(score);
  body.append(el("div", "card-lease", "leased to you"));
  card.append(body);
  return card;
}

function renderPicker(state: AppState): HTMLElement | null {
  if (state.picker === null) return null;
  const overlay = el("div", "picker");
  overlay.dataset.role = "picker";
  const query = el("div", "picker-query",
                   state.picker.query === "" ? "type to filter classes" : state.picker.query);
  query.dataset.role = "picker-query";
  overlay.append(query);

  const list = el("ul", "picker-list");
  const matches = pickerMatches(state);
  const highlighted = Math.min(state.picker.highlighted, Math.max(matches.length - 1, 0));
  matches.forEach((name, index) => {
    const row = el("li", index === highlighted ? "picker-row picker-row-active" : "picker-row",
                   name);
    row.dataset.className = name;
    list.append(row);
  });
  if (matches.length === 0) list.append(el("li", "picker-row picker-row-empty", "no matches"));
  overlay.append(list);
  return overlay;
}

export function render(root: HTMLElement, state: AppState, api: ApiClient): void {
  root.textContent = "";
  const shell = el("div", "shell");

  const header = el("header", "header");
  header.append(el("h1", "title", "Review queue"));
  header.append(renderCounter(state));
  shell.append(header);

  for (const banner of [renderBanner(state), renderConflict(state), renderNotice(state)]) {
    if (banner !== null) shell.append(banner);
  }

  if (state.phase === "loading") {
    shell.append(el("div", "status", "Loading queue..."));
  } else if (state.phase === "done") {
    const done = el("div", "status status-done", "All items reviewed. Queue is empty.");
    done.dataset.role = "done";
    shell.append(done);
  } else if (state.items.length > 0) {
    const list = el("div", "cards");
    state.items.forEach((_, index) => list.append(renderCard(state, api, index)));
    shell.append(list);

    const item = focusedItem(state);
    if (item !== null) {
      shell.append(el("div", "hint",
                      "A accept, R reject, L relabel, arrows move focus"));
    }
  }

  const picker = renderPicker(state);
  if (picker !== null) shell.append(picker);

  if (state.busy) shell.append(el("div", "status status-busy", "submitting..."));

  root.append(shell);
}
