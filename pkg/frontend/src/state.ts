// Session controller: owns the click mirror, the last server mask, and the
// single-in-flight request queue. The DOM shell subscribes through the
// listener bag and pulls pixels via renderOverlay(); nothing in here touches
// the document, which keeps the whole interaction loop testable in node.

import {
  ApiClient,
  ApiError,
  ClickPayload,
  ClickPoint,
  base64ToBytes,
} from "./api.js";
import { MaskBitmap, composeOverlay, emptyMask, maskIsBlank } from "./overlay.js";

export type MaskDecoder = (png: Uint8Array) => Promise<MaskBitmap>;

export interface StudioListeners {
  onOverlayChanged?: () => void;
  onHistoryChanged?: (clicks: ClickPoint[]) => void;
  onToast?: (message: string) => void;
  onIou?: (value: number | null) => void;
  onBusyChanged?: (busy: boolean) => void;
}

export interface ExportBundle {
  maskPng: Uint8Array;
  clickLog: string; // JSON, replayable offline
}

export class SessionController {
  readonly api: ApiClient;
  private readonly decode: MaskDecoder;
  private readonly listeners: StudioListeners;

  sessionId: string | null = null;
  width = 0;
  height = 0;
  clicks: ClickPoint[] = []; // mirror of server history
  mask: MaskBitmap | null = null; // always the server's last answer
  iou: number | null = null;
  maskOpacity = 0.5;
  referenceAttached = false;

  // single in-flight request; later actions chain behind the tail
  private tail: Promise<void> = Promise.resolve();
  private pending = 0;

  constructor(api: ApiClient, decode: MaskDecoder, listeners: StudioListeners = {}) {
    this.api = api;
    this.decode = decode;
    this.listeners = listeners;
  }

  get busy(): boolean {
    return this.pending > 0;
  }

  get canUndo(): boolean {
    return this.sessionId !== null && this.clicks.length > 0;
  }

  private enqueue<T>(task: () => Promise<T>): Promise<T | undefined> {
    this.pending += 1;
    if (this.pending === 1) this.listeners.onBusyChanged?.(true);
    const run = this.tail.then(task).then(
      (value) => {
        this.settle();
        return value;
      },
      (err) => {
        this.settle();
        this.listeners.onToast?.(
          err instanceof ApiError || err instanceof Error
            ? err.message
            : String(err),
        );
        return undefined;
      },
    );
    // the chain itself must never reject, or every later action would skip
    this.tail = run.then(
      () => undefined,
      () => undefined,
    );
    return run;
  }

  private settle(): void {
    this.pending -= 1;
    if (this.pending === 0) this.listeners.onBusyChanged?.(false);
  }

  private async applyPayload(payload: ClickPayload): Promise<void> {
    this.mask = await this.decode(base64ToBytes(payload.mask_base64));
    this.iou = payload.iou;
    this.listeners.onIou?.(this.iou);
    this.listeners.onHistoryChanged?.(this.clicks.slice());
    this.listeners.onOverlayChanged?.();
  }

  /** Open a session for the given encoded image. Resolves once ready. */
  loadImage(imageBytes: Uint8Array): Promise<void | undefined> {
    return this.enqueue(async () => {
      const info = await this.api.createSession(imageBytes);
      this.sessionId = info.session_id;
      this.width = info.width;
      this.height = info.height;
      this.clicks = [];
      this.mask = emptyMask(info.width, info.height);
      this.iou = null;
      this.referenceAttached = false;
      this.listeners.onIou?.(null);
      this.listeners.onHistoryChanged?.([]);
      this.listeners.onOverlayChanged?.();
    });
  }

  /** Place one click. Out-of-bounds is ignored; a server error is toasted
   * and the click is NOT recorded locally. */
  placeClick(i: number, j: number, positive: boolean): Promise<void | undefined> {
    if (this.sessionId === null) return Promise.resolve(undefined);
    if (i < 0 || j < 0 || i >= this.height || j >= this.width) {
      return Promise.resolve(undefined); // outside the image: ignore
    }
    return this.enqueue(async () => {
      const sid = this.sessionId!;
      const payload = await this.api.addClick(sid, { i, j, positive });
      this.clicks.push({ i, j, positive });
      if (payload.click_count !== this.clicks.length) {
        // mirror drifted (shouldn't happen): resync from the server
        const history = await this.api.fetchHistory(sid);
        this.clicks = history.clicks.slice();
      }
      await this.applyPayload(payload);
    });
  }

  /** Drop the most recent click. No request when the history is empty. */
  undo(): Promise<void | undefined> {
    if (this.sessionId === null || this.clicks.length === 0) {
      return Promise.resolve(undefined);
    }
    return this.enqueue(async () => {
      const payload = await this.api.undo(this.sessionId!);
      if (!payload.noop) this.clicks.pop();
      if (payload.click_count !== this.clicks.length) {
        const history = await this.api.fetchHistory(this.sessionId!);
        this.clicks = history.clicks.slice();
      }
      await this.applyPayload(payload);
    });
  }

  /** Attach a ground-truth mask; clicks then report live IoU. */
  attachReference(maskBase64: string): Promise<void | undefined> {
    if (this.sessionId === null) return Promise.resolve(undefined);
    return this.enqueue(async () => {
      const out = await this.api.attachReference(this.sessionId!, maskBase64);
      this.referenceAttached = out.attached;
      this.iou = out.iou;
      this.listeners.onIou?.(this.iou);
    });
  }

  /** Fetch the current mask PNG (byte-for-byte) and the click log. */
  exportBundle(): Promise<ExportBundle | undefined> {
    if (this.sessionId === null) return Promise.resolve(undefined);
    return this.enqueue(async () => {
      const sid = this.sessionId!;
      const maskPng = await this.api.fetchMaskPng(sid);
      const history = await this.api.fetchHistory(sid);
      const clickLog = JSON.stringify({ clicks: history.clicks }, null, 1);
      return { maskPng, clickLog };
    });
  }

  setOpacity(value: number): void {
    this.maskOpacity = Math.min(1, Math.max(0, value));
    this.listeners.onOverlayChanged?.();
  }

  overlayIsBlank(): boolean {
    return this.clicks.length === 0 && maskIsBlank(this.mask);
  }

  /** RGBA buffer for the overlay canvas at the current state. */
  renderOverlay(): Uint8ClampedArray<ArrayBuffer> {
    return composeOverlay(
      this.width,
      this.height,
      this.mask,
      this.clicks,
      this.maskOpacity,
    );
  }
}
