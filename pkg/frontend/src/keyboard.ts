/**
 * Keyboard routing: raw key events to semantic review actions.
 *
 * Two modes share the keymap.  In browse mode A/R accept or reject the
 * focused item, L opens the class picker and the arrow keys move focus.
 * With the picker open, printable characters build the filter query,
 * arrows move the highlight, Enter commits and Escape cancels.
 */

export type UiAction =
  | { kind: "accept" }
  | { kind: "reject" }
  | { kind: "open_picker" }
  | { kind: "move"; delta: number }
  | { kind: "retry" }
  | { kind: "picker_input"; query: string }
  | { kind: "picker_move"; delta: number }
  | { kind: "picker_confirm" }
  | { kind: "picker_cancel" };

export interface KeyContext {
  pickerOpen: boolean;
  pickerQuery: string;
  busy: boolean;
}

export function translateKey(event: KeyboardEvent, context: KeyContext): UiAction | null {
  if (context.busy) return null;
  const target = event.target as HTMLElement | null;
  // the picker query is handled here, not by a focused input, but other
  // form fields (if ever embedded) must keep their normal typing
  if (!context.pickerOpen && target !== null
      && (target.tagName === "INPUT" || target.tagName === "TEXTAREA")) {
    return null;
  }

  if (context.pickerOpen) {
    switch (event.key) {
      case "Escape":
        return { kind: "picker_cancel" };
      case "Enter":
        return { kind: "picker_confirm" };
      case "ArrowDown":
        return { kind: "picker_move", delta: 1 };
      case "ArrowUp":
        return { kind: "picker_move", delta: -1 };
      case "Backspace":
        return { kind: "picker_input", query: context.pickerQuery.slice(0, -1) };
      default:
        if (event.key.length === 1 && !event.ctrlKey && !event.metaKey) {
          return { kind: "picker_input", query: context.pickerQuery + event.key };
        }
        return null;
    }
  }

  switch (event.key) {
    case "a":
    case "A":
      return { kind: "accept" };
    case "r":
    case "R":
      return { kind: "reject" };
    case "l":
    case "L":
      return { kind: "open_picker" };
    case "ArrowRight":
    case "ArrowDown":
      return { kind: "move", delta: 1 };
    case "ArrowLeft":
    case "ArrowUp":
      return { kind: "move", delta: -1 };
    default:
      return null;
  }
}
