import { describe, expect, it } from "vitest";

import type { KeyContext } from "../src/keyboard.js";
import { translateKey } from "../src/keyboard.js";

function key(name: string, extra: Partial<KeyboardEvent> = {}): KeyboardEvent {
  return {
    key: name,
    ctrlKey: false,
    metaKey: false,
    target: null,
    ...extra,
  } as unknown as KeyboardEvent;
}

const browse: KeyContext = { pickerOpen: false, pickerQuery: "", busy: false };

describe("browse mode", () => {
  it("maps the verdict and navigation keys", () => {
    expect(translateKey(key("a"), browse)).toEqual({ kind: "accept" });
    expect(translateKey(key("A"), browse)).toEqual({ kind: "accept" });
    expect(translateKey(key("r"), browse)).toEqual({ kind: "reject" });
    expect(translateKey(key("R"), browse)).toEqual({ kind: "reject" });
    expect(translateKey(key("l"), browse)).toEqual({ kind: "open_picker" });
    expect(translateKey(key("L"), browse)).toEqual({ kind: "open_picker" });
    expect(translateKey(key("ArrowRight"), browse)).toEqual({ kind: "move", delta: 1 });
    expect(translateKey(key("ArrowDown"), browse)).toEqual({ kind: "move", delta: 1 });
    expect(translateKey(key("ArrowLeft"), browse)).toEqual({ kind: "move", delta: -1 });
    expect(translateKey(key("ArrowUp"), browse)).toEqual({ kind: "move", delta: -1 });
  });

  it("ignores unmapped keys", () => {
    expect(translateKey(key("x"), browse)).toBeNull();
    expect(translateKey(key("Enter"), browse)).toBeNull();
    expect(translateKey(key("Escape"), browse)).toBeNull();
  });

  it("leaves typing in form fields alone", () => {
    const input = document.createElement("input");
    expect(translateKey(key("a", { target: input } as Partial<KeyboardEvent>), browse))
      .toBeNull();
    const textarea = document.createElement("textarea");
    expect(translateKey(key("r", { target: textarea } as Partial<KeyboardEvent>), browse))
      .toBeNull();
  });
});

describe("busy guard", () => {
  it("drops every key while a verdict is in flight", () => {
    const busy: KeyContext = { pickerOpen: false, pickerQuery: "", busy: true };
    expect(translateKey(key("a"), busy)).toBeNull();
    const busyPicker: KeyContext = { pickerOpen: true, pickerQuery: "bl", busy: true };
    expect(translateKey(key("Enter"), busyPicker)).toBeNull();
  });
});

describe("picker mode", () => {
  const open: KeyContext = { pickerOpen: true, pickerQuery: "bl", busy: false };

  it("builds the query from printable keys", () => {
    expect(translateKey(key("u"), open)).toEqual({ kind: "picker_input", query: "blu" });
    expect(translateKey(key(" "), open)).toEqual({ kind: "picker_input", query: "bl " });
  });

  it("Backspace trims the query", () => {
    expect(translateKey(key("Backspace"), open))
      .toEqual({ kind: "picker_input", query: "b" });
    const empty: KeyContext = { pickerOpen: true, pickerQuery: "", busy: false };
    expect(translateKey(key("Backspace"), empty))
      .toEqual({ kind: "picker_input", query: "" });
  });

  it("Enter confirms, Escape cancels, arrows move the highlight", () => {
    expect(translateKey(key("Enter"), open)).toEqual({ kind: "picker_confirm" });
    expect(translateKey(key("Escape"), open)).toEqual({ kind: "picker_cancel" });
    expect(translateKey(key("ArrowDown"), open)).toEqual({ kind: "picker_move", delta: 1 });
    expect(translateKey(key("ArrowUp"), open)).toEqual({ kind: "picker_move", delta: -1 });
  });

  it("modifier chords never reach the query", () => {
    expect(translateKey(key("c", { ctrlKey: true } as Partial<KeyboardEvent>), open))
      .toBeNull();
    expect(translateKey(key("v", { metaKey: true } as Partial<KeyboardEvent>), open))
      .toBeNull();
  });

  it("verdict keys type into the query instead of acting", () => {
    expect(translateKey(key("a"), open)).toEqual({ kind: "picker_input", query: "bla" });
    expect(translateKey(key("r"), open)).toEqual({ kind: "picker_input", query: "blr" });
  });

  it("handles keys even when a form field is the target", () => {
    const input = document.createElement("input");
    expect(translateKey(key("u", { target: input } as Partial<KeyboardEvent>), open))
      .toEqual({ kind: "picker_input", query: "blu" });
  });
});
