/**
 * Application state and its pure reducer.
 *
 * The state is a function of the last service responses alone: nothing
 * here mutates on user intent, only on acknowledged results.  A verdict
 * in flight sets `busy`, which the keyboard layer uses to drop input
 * until the server answers.
 */

import type { ReviewItemDoc } from "./api.js";

export interface PickerState {
  query: string;
  highlighted: number;
}

export type Phase = "loading" | "reviewing" | "done" | "error";

export interface AppState {
  phase: Phase;
  items: ReviewItemDoc[];
  focus: number;
  busy: boolean;
  picker: PickerState | null;
  conflict: ReviewItemDoc | null;
  notice: string | null;
  errorMessage: string | null;
  pending: number | null;
  total: number | null;
  vocabularies: Record<string, string[]>;
}

export type AppEvent =
  | { kind: "queue"; items: ReviewItemDoc[]; counts: { pending: number; total: number } }
  | { kind: "vocabulary"; vocabularies: Record<string, string[]> }
  | { kind: "fetch_failed"; message: string }
  | { kind: "submit_started" }
  | { kind: "resolved"; itemId: string }
  | { kind: "conflict"; itemId: string; item: ReviewItemDoc }
  | { kind: "invalid"; message: string }
  | { kind: "focus_move"; delta: number }
  | { kind: "picker_open" }
  | { kind: "picker_close" }
  | { kind: "picker_query"; query: string }
  | { kind: "picker_move"; delta: number };

export function initialState(): AppState {
  return {
    phase: "loading",
    items: [],
    focus: 0,
    busy: false,
    picker: null,
    conflict: null,
    notice: null,
    errorMessage: null,
    pending: null,
    total: null,
    vocabularies: {},
  };
}

export function focusedItem(state: AppState): ReviewItemDoc | null {
  return state.items[state.focus] ?? null;
}

/** Vocabulary classes matching the picker query, case-insensitive substring. */
export function pickerMatches(state: AppState): string[] {
  const item = focusedItem(state);
  if (item === null || state.picker === null) return [];
  const classes = state.vocabularies[item.granularity] ?? [];
  const needle = state.picker.query.toLowerCase();
  return classes.filter((name) => name.toLowerCase().includes(needle));
}

export function pickerSelection(state: AppState): string | null {
  const matches = pickerMatches(state);
  if (state.picker === null || matches.length === 0) return null;
  const index = Math.min(state.picker.highlighted, matches.length - 1);
  return matches[index];
}

/** Resolved count for the progress counter; null until counts arrive. */
export function resolvedCount(state: AppState): number | null {
  if (state.pending === null || state.total === null) return null;
  return state.total - state.pending;
}

function clampFocus(items: ReviewItemDoc[], focus: number): number {
  if (items.length === 0) return 0;
  return Math.max(0, Math.min(focus, items.length - 1));
}

function dropItem(state: AppState, itemId: string): AppState {
  const items = state.items.filter((item) => item.id !== itemId);
  const pending = state.pending === null ? null : state.pending - 1;
  return {
    ...state,
    items,
    pending,
    focus: clampFocus(items, state.focus),
    busy: false,
    picker: null,
    phase: items.length === 0 ? "loading" : "reviewing",
  };
}

export function reduce(state: AppState, event: AppEvent): AppState {
  switch (event.kind) {
    case "queue":
      return {
        ...state,
        phase: event.items.length === 0 ? "done" : "reviewing",
        items: event.items,
        focus: 0,
        busy: false,
        errorMessage: null,
        pending: event.counts.pending,
        total: event.counts.total,
      };
    case "vocabulary":
      return { ...state, vocabularies: event.vocabularies };
    case "fetch_failed":
      return { ...state, phase: "error", busy: false, errorMessage: event.message };
    case "submit_started":
      // the item stays exactly as served until the server acknowledges
      return { ...state, busy: true, notice: null, conflict: null };
    case "resolved":
      return dropItem(state, event.itemId);
    case "conflict":
      // someone else resolved it first; show their verdict and move on
      return { ...dropItem(state, event.itemId), conflict: event.item };
    case "invalid":
      return { ...state, busy: false, notice: event.message };
    case "focus_move": {
      const focus = clampFocus(state.items, state.focus + event.delta);
      return { ...state, focus, picker: null, notice: null };
    }
    case "picker_open": {
      if (focusedItem(state) === null) return state;
      return { ...state, picker: { query: "", highlighted: 0 }, notice: null };
    }
    case "picker_close":
      return { ...state, picker: null };
    case "picker_query":
      if (state.picker === null) return state;
      return { ...state, picker: { query: event.query, highlighted: 0 } };
    case "picker_move": {
      if (state.picker === null) return state;
      const count = pickerMatches(state).length;
      if (count === 0) return state;
      const highlighted = Math.max(
        0, Math.min(state.picker.highlighted + event.delta, count - 1));
      return { ...state, picker: { ...state.picker, highlighted } };
    }
  }
}
