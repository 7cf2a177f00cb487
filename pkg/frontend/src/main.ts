// DOM shell: wires the session controller to the canvas stack and the
// sidebar controls. All mask pixels come from the server; this file only
// paints them.

import { ApiClient } from "./api.js";
import { MaskBitmap } from "./overlay.js";
import { SessionController } from "./state.js";

const $ = <T extends HTMLElement>(id: string): T =>
  document.getElementById(id) as T;

const imageCanvas = $<HTMLCanvasElement>("image-canvas");
const overlayCanvas = $<HTMLCanvasElement>("overlay-canvas");
const dropHint = $<HTMLDivElement>("drop-hint");
const fileInput = $<HTMLInputElement>("file-input");
const referenceInput = $<HTMLInputElement>("reference-input");
const undoButton = $<HTMLButtonElement>("undo-button");
const exportButton = $<HTMLButtonElement>("export-button");
const opacitySlider = $<HTMLInputElement>("opacity-slider");
const opacityValue = $<HTMLSpanElement>("opacity-value");
const clickList = $<HTMLOListElement>("click-list");
const iouReadout = $<HTMLSpanElement>("iou-readout");
const statusLine = $<HTMLSpanElement>("status-line");
const toastHost = $<HTMLDivElement>("toast-host");

// ---------------------------------------------------------------- helpers

function toast(message: string): void {
  const node = document.createElement("div");
  node.className = "toast";
  node.textContent = message;
  toastHost.appendChild(node);
  setTimeout(() => node.remove(), 4000);
}

/** Decode a mask PNG into a per-pixel 0/255 buffer via an offscreen canvas. */
async function decodeMaskPng(png: Uint8Array): Promise<MaskBitmap> {
  const copy = new Uint8Array(png); // detach from any pooled buffer
  const bitmap = await createImageBitmap(new Blob([copy.buffer], { type: "image/png" }));
  const scratch = document.createElement("canvas");
  scratch.width = bitmap.width;
  scratch.height = bitmap.height;
  const ctx = scratch.getContext("2d")!;
  ctx.drawImage(bitmap, 0, 0);
  bitmap.close();
  const rgba = ctx.getImageData(0, 0, scratch.width, scratch.height).data;
  const alpha = new Uint8Array(scratch.width * scratch.height);
  for (let p = 0; p < alpha.length; p++) {
    alpha[p] = rgba[p * 4] >= 128 ? 255 : 0; // server masks are grayscale
  }
  return { width: scratch.width, height: scratch.height, alpha };
}

function download(bytes: Uint8Array | string, name: string, type: string): void {
  const blob =
    typeof bytes === "string"
      ? new Blob([bytes], { type })
      : new Blob([new Uint8Array(bytes).buffer], { type });
  const url = URL.createObjectURL(blob);
  const anchor = document.createElement("a");
  anchor.href = url;
  anchor.download = name;
  anchor.click();
  setTimeout(() => URL.revokeObjectURL(url), 5000);
}

function readFileBytes(file: File): Promise<Uint8Array<ArrayBuffer>> {
  return file.arrayBuffer().then((buf) => new Uint8Array(buf));
}

function bytesToBase64(bytes: Uint8Array): string {
  let raw = "";
  for (let k = 0; k < bytes.length; k++) raw += String.fromCharCode(bytes[k]);
  return btoa(raw);
}

// ------------------------------------------------------------- controller

const controller = new SessionController(new ApiClient(""), decodeMaskPng, {
  onOverlayChanged: paintOverlay,
  onHistoryChanged: renderHistory,
  onToast: toast,
  onIou: renderIou,
  onBusyChanged: (busy) => {
    statusLine.textContent = busy ? "working..." : "ready";
  },
});

function paintOverlay(): void {
  if (controller.width === 0) return;
  const ctx = overlayCanvas.getContext("2d")!;
  const buffer = controller.renderOverlay();
  ctx.putImageData(
    new ImageData(buffer, controller.width, controller.height),
    0,
    0,
  );
}

function renderHistory(clicks: { i: number; j: number; positive: boolean }[]): void {
  undoButton.disabled = clicks.length === 0;
  clickList.replaceChildren();
  clicks.forEach((c, index) => {
    const item = document.createElement("li");
    item.textContent = `${index + 1}. ${c.positive ? "+" : "−"} at (${c.i}, ${c.j})`;
    item.className = c.positive ? "click-positive" : "click-negative";
    clickList.appendChild(item);
  });
}

function renderIou(value: number | null): void {
  if (!controller.referenceAttached || value === null) {
    iouReadout.textContent = "";
    iouReadout.hidden = true;
    return;
  }
  iouReadout.hidden = false;
  iouReadout.textContent = `IoU ${value.toFixed(4)}`;
}

// ------------------------------------------------------------ image load

async function openImage(file: File): Promise<void> {
  const bytes = await readFileBytes(file);
  const bitmap = await createImageBitmap(new Blob([bytes.buffer], { type: file.type }));
  await controller.loadImage(bytes);
  if (controller.sessionId === null) {
    bitmap.close();
    return; // create failed; the toast already fired
  }
  imageCanvas.width = bitmap.width;
  imageCanvas.height = bitmap.height;
  overlayCanvas.width = bitmap.width;
  overlayCanvas.height = bitmap.height;
  imageCanvas.getContext("2d")!.drawImage(bitmap, 0, 0);
  bitmap.close();
  dropHint.hidden = true;
  exportButton.disabled = false;
  referenceInput.disabled = false;
  paintOverlay();
}

fileInput.addEventListener("change", () => {
  const file = fileInput.files?.[0];
  if (file) void openImage(file);
});

referenceInput.addEventListener("change", async () => {
  const file = referenceInput.files?.[0];
  if (!file) return;
  const bytes = await readFileBytes(file);
  void controller.attachReference(bytesToBase64(bytes));
});

// ------------------------------------------------------------- clicking

// the canvas may be CSS-scaled; map pointer coords back to image pixels
function eventToPixel(event: MouseEvent): { i: number; j: number } {
  const rect = overlayCanvas.getBoundingClientRect();
  const j = Math.floor(((event.clientX - rect.left) / rect.width) * controller.width);
  const i = Math.floor(((event.clientY - rect.top) / rect.height) * controller.height);
  return { i, j };
}

overlayCanvas.addEventListener("contextmenu", (event) => {
  event.preventDefault(); // right button is the negative click
});

overlayCanvas.addEventListener("pointerdown", (event) => {
  if (controller.sessionId === null) return;
  if (event.button !== 0 && event.button !== 2) return;
  event.preventDefault();
  const { i, j } = eventToPixel(event);
  void controller.placeClick(i, j, event.button === 0);
});

// ------------------------------------------------------------- controls

undoButton.addEventListener("click", () => {
  void controller.undo();
});

exportButton.addEventListener("click", async () => {
  const bundle = await controller.exportBundle();
  if (!bundle) return;
  download(bundle.maskPng, "mask.png", "image/png");
  download(bundle.clickLog, "clicks.json", "application/json");
});

opacitySlider.addEventListener("input", () => {
  const value = Number(opacitySlider.value) / 100;
  opacityValue.textContent = `${opacitySlider.value}%`;
  controller.setOpacity(value);
});

undoButton.disabled = true;
exportButton.disabled = true;
referenceInput.disabled = true;
statusLine.textContent = "ready";
