import { toScreenAll, transformFor, type ScreenRect } from "./overlay.js";
import { clampLevel, clampViewport, viewportForLevelChange, type Viewport } from "./tiles.js";
import type {
  RegionBox,
  RegionsResponse,
  SeriesSummary,
  StudySummary,
  WsiInfo,
} from "./types.js";

export type PaneContent = "empty" | "radiology" | "wsi";

export interface Layout {
  left: PaneContent;
  right: PaneContent;
}

/** Whole-view state. Transitions are pure: every handler returns a new
 * state, so renders and tests replay them deterministically. Responses to
 * in-flight requests carry the sequence number captured at dispatch and are
 * dropped when a newer interaction has already bumped it. */
export interface ViewState {
  studies: StudySummary[];
  selectedStudy: string | null;
  currentSeries: string | null;
  sliceIndex: number;
  sliceCount: number;
  zoom: number;
  pan: { x: number; y: number };
  regions: RegionBox[];
  screenRegions: ScreenRect[];
  regionNotice: string | null;
  linkedWsi: string | null;
  wsiInfo: WsiInfo | null;
  wsiLevel: number;
  wsiViewport: Viewport;
  layout: Layout;
  notice: string | null;
  seq: number;
}

export function initialState(): ViewState {
  return {
    studies: [],
    selectedStudy: null,
    currentSeries: null,
    sliceIndex: 0,
    sliceCount: 0,
    zoom: 1,
    pan: { x: 0, y: 0 },
    regions: [],
    screenRegions: [],
    regionNotice: null,
    linkedWsi: null,
    wsiInfo: null,
    wsiLevel: 0,
    wsiViewport: { x: 0, y: 0, w: 512, h: 512 },
    layout: { left: "empty", right: "empty" },
    notice: null,
    seq: 0,
  };
}

export function withStudies(state: ViewState, studies: StudySummary[]): ViewState {
  return { ...state, studies: [...studies] };
}

/** A study row was activated: the radiology pane opens on the right as the
 * entry point; series and regions arrive asynchronously under a new seq. */
export function beginStudySelection(state: ViewState, studyUid: string): ViewState {
  return {
    ...state,
    selectedStudy: studyUid,
    currentSeries: null,
    sliceIndex: 0,
    sliceCount: 0,
    zoom: 1,
    pan: { x: 0, y: 0 },
    regions: [],
    screenRegions: [],
    regionNotice: null,
    layout: { ...state.layout, right: "radiology" },
    notice: null,
    seq: state.seq + 1,
  };
}

export function isStale(state: ViewState, seq: number): boolean {
  return seq !== state.seq;
}

export function withSeries(state: ViewState, seq: number,
                           series: SeriesSummary[]): ViewState {
  if (isStale(state, seq)) {
    return state;
  }
  const candidate = series.find(
    (s) => (s.modality === "MR" || s.modality === "CT") && s.instanceCount > 0);
  if (!candidate) {
    return { ...state, notice: "study has no displayable image series" };
  }
  return { ...state, currentSeries: candidate.seriesUid, sliceIndex: 0 };
}

function derivedRegions(state: ViewState, regions: RegionBox[]): ScreenRect[] {
  return toScreenAll(regions, transformFor(state.zoom, state.pan));
}

export function withRegions(state: ViewState, seq: number,
                            resp: RegionsResponse): ViewState {
  if (isStale(state, seq) || resp.seriesUid !== state.currentSeries
      || resp.slice !== state.sliceIndex) {
    return state;
  }
  const next = {
    ...state,
    sliceCount: resp.sliceCount,
    regions: [...resp.regions],
    regionNotice: null,
  };
  return { ...next, screenRegions: derivedRegions(next, resp.regions) };
}

/** Region fetch failed: the frame stays visible, the overlay is dropped and
 * a notice explains why. */
export function regionsUnavailable(state: ViewState, seq: number,
                                   reason: string): ViewState {
  if (isStale(state, seq)) {
    return state;
  }
  return { ...state, regions: [], screenRegions: [],
           regionNotice: reason };
}

export function setSlice(state: ViewState, index: number): ViewState {
  const top = Math.max(state.sliceCount - 1, 0);
  const clamped = Math.min(Math.max(index, 0), top);
  if (clamped === state.sliceIndex) {
    return state;
  }
  // overlays recompute per slice: clear and refetch under a new seq
  return {
    ...state,
    sliceIndex: clamped,
    regions: [],
    screenRegions: [],
    regionNotice: null,
    seq: state.seq + 1,
  };
}

export function setZoom(state: ViewState, zoom: number): ViewState {
  const clamped = Math.max(zoom, 0.1);
  const next = { ...state, zoom: clamped };
  return { ...next, screenRegions: derivedRegions(next, state.regions) };
}

export function setPan(state: ViewState, pan: { x: number; y: number }): ViewState {
  const next = { ...state, pan: { ...pan } };
  return { ...next, screenRegions: derivedRegions(next, state.regions) };
}

/** Linked pathology found: WSI pane takes the LEFT side while the radiology
 * pane stays on the RIGHT. */
export function wsiLinked(state: ViewState, wsiStudyUid: string): ViewState {
  return {
    ...state,
    linkedWsi: wsiStudyUid,
    wsiInfo: null,
    wsiLevel: 0,
    layout: { left: "wsi", right: "radiology" },
    notice: null,
    seq: state.seq + 1,
  };
}

/** No linked pathology study: notice only, the layout must not change. */
export function wsiLinkAbsent(state: ViewState): ViewState {
  return { ...state, notice: "no linked pathology study" };
}

export function withWsiInfo(state: ViewState, seq: number, info: WsiInfo): ViewState {
  if (isStale(state, seq)) {
    return state;
  }
  const level = info.levels[0];
  const viewport = level
    ? { x: 0, y: 0, w: level.cols, h: level.rows }
    : state.wsiViewport;
  return { ...state, wsiInfo: info, wsiLevel: 0, wsiViewport: viewport };
}

export function changeWsiLevel(state: ViewState, delta: number): ViewState {
  if (!state.wsiInfo) {
    return state;
  }
  const levels = state.wsiInfo.levels;
  const target = clampLevel(state.wsiLevel + delta, levels);
  if (target === state.wsiLevel) {
    return state;
  }
  const viewport = viewportForLevelChange(
    state.wsiViewport, levels[state.wsiLevel], levels[target]);
  return { ...state, wsiLevel: target, wsiViewport: viewport };
}

export function panWsi(state: ViewState, dx: number, dy: number): ViewState {
  if (!state.wsiInfo) {
    return state;
  }
  const level = state.wsiInfo.levels[state.wsiLevel];
  const moved = { ...state.wsiViewport,
                  x: state.wsiViewport.x + dx,
                  y: state.wsiViewport.y + dy };
  return { ...state, wsiViewport: clampViewport(moved, level) };
}

export function withNotice(state: ViewState, notice: string): ViewState {
  return { ...state, notice };
}
