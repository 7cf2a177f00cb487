// The full interaction loop against the mock server: load, five mixed
// clicks with a live overlay, undo back to blank, byte-exact export.

import { describe, expect, it } from "vitest";

import { ApiClient, ClickPoint } from "../src/api.js";
import { SessionController } from "../src/state.js";
import { MockServer, bytesToBase64, encodeFakeImage, encodeFakeMask,
         fakeDecoder } from "./mockServer.js";

function makeStudio(events: Record<string, number>, toasts: string[]) {
  const server = new MockServer();
  const api = new ApiClient("", server.fetch);
  const controller = new SessionController(api, fakeDecoder, {
    onOverlayChanged: () => {
      events.overlay = (events.overlay ?? 0) + 1;
    },
    onHistoryChanged: () => {
      events.history = (events.history ?? 0) + 1;
    },
    onToast: (message) => {
      toasts.push(message);
    },
  });
  return { server, controller };
}

const FIVE_CLICKS: ClickPoint[] = [
  { i: 5, j: 5, positive: true },
  { i: 12, j: 9, positive: false },
  { i: 3, j: 14, positive: true },
  { i: 18, j: 4, positive: true },
  { i: 9, j: 11, positive: false },
];

describe("interaction loop", () => {
  it("five mixed clicks update the overlay every time, undo x5 blanks it, "
     + "export matches the server byte for byte", async () => {
    const events: Record<string, number> = {};
    const toasts: string[] = [];
    const { server, controller } = makeStudio(events, toasts);

    await controller.loadImage(encodeFakeImage(16, 24));
    expect(controller.sessionId).toBe("mock-session-1");
    expect(controller.width).toBe(16);
    expect(controller.height).toBe(24);
    expect(controller.overlayIsBlank()).toBe(true);

    let previous = controller.renderOverlay();
    for (const [n, click] of FIVE_CLICKS.entries()) {
      const before = events.overlay ?? 0;
      await controller.placeClick(click.i, click.j, click.positive);
      expect(events.overlay).toBeGreaterThan(before); // repainted
      const now = controller.renderOverlay();
      expect(now).not.toEqual(previous); // pixels actually moved
      previous = now;
      expect(controller.clicks.length).toBe(n + 1);
      expect(controller.clicks).toEqual(server.clicks); // mirror holds
    }
    expect(controller.canUndo).toBe(true);

    for (let k = 5; k > 0; k--) {
      await controller.undo();
      expect(controller.clicks.length).toBe(k - 1);
      expect(controller.clicks).toEqual(server.clicks);
    }
    expect(controller.overlayIsBlank()).toBe(true);
    expect(controller.renderOverlay().every((v) => v === 0)).toBe(true);
    expect(controller.canUndo).toBe(false);

    // a sixth undo must not reach the wire
    const wireCalls = server.requests.length;
    await controller.undo();
    expect(server.requests.length).toBe(wireCalls);

    // export passes the server's bytes through untouched
    await controller.placeClick(7, 7, true);
    const bundle = await controller.exportBundle();
    expect(bundle).toBeDefined();
    expect(Array.from(bundle!.maskPng)).toEqual(
      Array.from(server.currentMaskBytes()));
    const log = JSON.parse(bundle!.clickLog);
    expect(log.clicks).toEqual([{ i: 7, j: 7, positive: true }]);
    expect(toasts).toEqual([]);
  });

  it("a server error is toasted and the click is not recorded", async () => {
    const events: Record<string, number> = {};
    const toasts: string[] = [];
    const { server, controller } = makeStudio(events, toasts);
    await controller.loadImage(encodeFakeImage(16, 16));

    await controller.placeClick(4, 4, true);
    server.failNextClick = true;
    await controller.placeClick(8, 8, true);
    expect(toasts).toEqual(["injected failure"]);
    expect(controller.clicks.length).toBe(1); // rejected click not mirrored
    expect(server.clicks.length).toBe(1);

    // the queue keeps working afterwards
    await controller.placeClick(10, 10, false);
    expect(controller.clicks.length).toBe(2);
    expect(controller.clicks).toEqual(server.clicks);
  });

  it("clicks outside the image bounds never reach the wire", async () => {
    const events: Record<string, number> = {};
    const toasts: string[] = [];
    const { server, controller } = makeStudio(events, toasts);
    await controller.loadImage(encodeFakeImage(10, 10));
    const wireCalls = server.requests.length;
    await controller.placeClick(-1, 3, true);
    await controller.placeClick(3, 10, true);
    await controller.placeClick(10, 3, false);
    expect(server.requests.length).toBe(wireCalls);
    expect(controller.clicks).toEqual([]);
  });

  it("undo then identical re-click reproduces the identical overlay", async () => {
    const events: Record<string, number> = {};
    const toasts: string[] = [];
    const { controller } = makeStudio(events, toasts);
    await controller.loadImage(encodeFakeImage(20, 20));
    await controller.placeClick(6, 6, true);
    await controller.placeClick(13, 13, false);
    const before = controller.renderOverlay();
    await controller.undo();
    await controller.placeClick(13, 13, false);
    expect(controller.renderOverlay()).toEqual(before);
  });

  it("keeps a single request in flight and preserves click order", async () => {
    const events: Record<string, number> = {};
    const toasts: string[] = [];
    const server = new MockServer();
    let inFlight = 0;
    let maxInFlight = 0;
    const gated = async (url: string, init?: RequestInit) => {
      inFlight += 1;
      maxInFlight = Math.max(maxInFlight, inFlight);
      await new Promise((resolve) => setTimeout(resolve, 5));
      const resp = await server.fetch(url, init);
      inFlight -= 1;
      return resp;
    };
    const controller = new SessionController(
      new ApiClient("", gated), fakeDecoder, {
        onToast: (m) => toasts.push(m),
      });
    await controller.loadImage(encodeFakeImage(16, 16));

    // fire-and-forget a burst; the controller must serialize them
    const burst = [
      controller.placeClick(1, 1, true),
      controller.placeClick(2, 2, false),
      controller.placeClick(3, 3, true),
      controller.placeClick(4, 4, false),
    ];
    expect(controller.busy).toBe(true);
    await Promise.all(burst);
    expect(maxInFlight).toBe(1);
    expect(server.clicks.map((c) => c.i)).toEqual([1, 2, 3, 4]);
    expect(controller.clicks).toEqual(server.clicks);
    expect(controller.busy).toBe(false);
    expect(toasts).toEqual([]);
  });

  it("live IoU appears once a reference mask is attached", async () => {
    const events: Record<string, number> = {};
    const toasts: string[] = [];
    const ious: Array<number | null> = [];
    const server = new MockServer();
    const controller = new SessionController(
      new ApiClient("", server.fetch), fakeDecoder, {
        onIou: (v) => ious.push(v),
      });
    await controller.loadImage(encodeFakeImage(12, 12));
    await controller.placeClick(6, 6, true);
    expect(controller.iou).toBeNull();

    // reference = exactly the current mask, so IoU becomes 1
    const reference = server.maskFor(server.clicks);
    await controller.attachReference(
      bytesToBase64(encodeFakeMask(reference)));
    expect(controller.referenceAttached).toBe(true);
    expect(controller.iou).toBe(1);

    await controller.placeClick(2, 2, false);
    expect(typeof controller.iou).toBe("number");
    expect(toasts).toEqual([]);
  });
});
