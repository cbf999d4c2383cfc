import type {
  LinkedWsiResponse,
  Manifest,
  RegionsResponse,
  ResolveResponse,
  SeriesSummary,
  StudySummary,
  WsiInfo,
} from "./types.js";

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

/** Thin client over the link-service REST API. The UI never talks to the
 * archive directly; everything goes through these endpoints, and the only
 * non-GET request is the link submission. */
export class ApiClient {
  constructor(private base: string) {
    this.base = base.replace(/\/+$/, "");
  }

  private async getJson<T>(path: string): Promise<T> {
    const resp = await fetch(this.base + path);
    if (!resp.ok) {
      throw new ApiError(resp.status, await safeErrorText(resp));
    }
    return (await resp.json()) as T;
  }

  listStudies(): Promise<StudySummary[]> {
    return this.getJson("/api/studies");
  }

  listSeries(studyUid: string): Promise<SeriesSummary[]> {
    return this.getJson(`/api/studies/${encodeURIComponent(studyUid)}/series`);
  }

  resolveStudy(studyUid: string): Promise<ResolveResponse> {
    return this.getJson(`/api/studies/${encodeURIComponent(studyUid)}/resolve`);
  }

  regions(seriesUid: string, slice: number): Promise<RegionsResponse> {
    return this.getJson(
      `/api/series/${encodeURIComponent(seriesUid)}/slices/${slice}/regions`);
  }

  async submitLink(radiologyStudyUid: string, wsiStudyUid: string): Promise<string> {
    const resp = await fetch(this.base + "/api/link", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({
        radiologyStudyUID: radiologyStudyUid,
        wsiStudyUID: wsiStudyUid,
      }),
    });
    if (!resp.ok) {
      throw new ApiError(resp.status, await safeErrorText(resp));
    }
    const doc = (await resp.json()) as { id: string };
    return doc.id;
  }

  manifest(id: string): Promise<Manifest> {
    return this.getJson(`/api/link/${encodeURIComponent(id)}`);
  }

  linkedWsi(studyUid: string, regionId: number): Promise<LinkedWsiResponse> {
    return this.getJson(
      `/api/linked-wsi?study=${encodeURIComponent(studyUid)}&region=${regionId}`);
  }

  wsiInfo(studyUid: string): Promise<WsiInfo> {
    return this.getJson(`/api/wsi/${encodeURIComponent(studyUid)}/info`);
  }

  frameUrl(seriesUid: string, slice: number,
           wc?: number, ww?: number): string {
    const base =
      `${this.base}/api/series/${encodeURIComponent(seriesUid)}/slices/${slice}/frame`;
    if (wc === undefined || ww === undefined) {
      return base;
    }
    return `${base}?wc=${wc}&ww=${ww}`;
  }

  tileUrl(studyUid: string, level: number, x: number, y: number): string {
    return `${this.base}/api/wsi/${encodeURIComponent(studyUid)}` +
      `/tiles/${level}/${x}/${y}`;
  }
}

async function safeErrorText(resp: Response): Promise<string> {
  try {
    const doc = await resp.json();
    return typeof doc?.error === "string" ? doc.error : resp.statusText;
  } catch {
    return resp.statusText;
  }
}
