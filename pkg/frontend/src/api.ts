// Thin typed client for the session server. Every method maps to one HTTP
// route; errors carry the server's message so the UI can toast it verbatim.

export interface SessionInfo {
  session_id: string;
  width: number;
  height: number;
  grid: [number, number];
}

export interface ClickPoint {
  i: number; // row
  j: number; // column
  positive: boolean;
}

export interface ClickPayload {
  session_id: string;
  click_count: number;
  width: number;
  height: number;
  mask_base64: string;
  iou: number | null;
  noop?: boolean;
}

export interface HistoryPayload extends ClickPayload {
  clicks: ClickPoint[];
}

export class ApiError extends Error {
  readonly status: number;

  constructor(status: number, message: string) {
    super(message);
    this.status = status;
  }
}

type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

async function readError(resp: Response): Promise<ApiError> {
  let message = `server error ${resp.status}`;
  try {
    const doc = await resp.json();
    if (doc && typeof doc.error === "string") message = doc.error;
  } catch {
    // non-JSON body; keep the status line
  }
  return new ApiError(resp.status, message);
}

export function base64ToBytes(b64: string): Uint8Array {
  const raw = atob(b64);
  const out = new Uint8Array(raw.length);
  for (let k = 0; k < raw.length; k++) out[k] = raw.charCodeAt(k);
  return out;
}

export class ApiClient {
  private readonly baseUrl: string;
  private readonly fetchFn: FetchLike;

  constructor(baseUrl = "", fetchFn: FetchLike = (...a) => fetch(...a)) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchFn = fetchFn;
  }

  private async json<T>(url: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + url, init);
    if (!resp.ok) throw await readError(resp);
    return (await resp.json()) as T;
  }

  // raw upload: the server accepts PNG/JPEG bytes directly
  createSession(imageBytes: Uint8Array): Promise<SessionInfo> {
    return this.json<SessionInfo>("/sessions", {
      method: "POST",
      headers: { "Content-Type": "image/png" },
      body: imageBytes as unknown as BodyInit,
    });
  }

  addClick(sid: string, click: ClickPoint): Promise<ClickPayload> {
    return this.json<ClickPayload>(`/sessions/${sid}/clicks`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(click),
    });
  }

  undo(sid: string): Promise<ClickPayload> {
    return this.json<ClickPayload>(`/sessions/${sid}/undo`, { method: "POST" });
  }

  attachReference(sid: string, maskBase64: string): Promise<{ attached: boolean; iou: number }> {
    return this.json(`/sessions/${sid}/reference`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ mask_base64: maskBase64 }),
    });
  }

  async fetchMaskPng(sid: string): Promise<Uint8Array> {
    const resp = await this.fetchFn(`${this.baseUrl}/sessions/${sid}/mask`);
    if (!resp.ok) throw await readError(resp);
    return new Uint8Array(await resp.arrayBuffer());
  }

  fetchHistory(sid: string): Promise<HistoryPayload> {
    return this.json<HistoryPayload>(`/sessions/${sid}/mask?include=history`);
  }

  async deleteSession(sid: string): Promise<void> {
    const resp = await this.fetchFn(`${this.baseUrl}/sessions/${sid}`, {
      method: "DELETE",
    });
    if (!resp.ok && resp.status !== 404) throw await readError(resp);
  }
}
