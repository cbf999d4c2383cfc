export interface StudySummary {
  studyUid: string;
  patientId: string;
  patientName: string;
  studyDescription: string;
  modalities: string[];
  studyDate: string | null;
}

export interface SeriesSummary {
  seriesUid: string;
  studyUid: string;
  modality: string;
  seriesDescription: string;
  instanceCount: number;
}

export interface RegionBox {
  id: number;
  x: number;
  y: number;
  w: number;
  h: number;
  pixelCount: number;
}

export interface RegionsResponse {
  seriesUid: string;
  slice: number;
  sliceCount: number;
  regions: RegionBox[];
}

export interface ResolveResponse {
  studyUid: string;
  resolved: {
    label: string;
    tier: string;
    source: string;
    laterality: string;
  } | null;
}

export interface Manifest {
  id: string;
  radiologyStudyUid: string;
  wsiStudyUid: string;
  status: string;
  segSeriesUid: string | null;
  error: string | null;
}

export interface WsiLevel {
  level: number;
  rows: number;
  cols: number;
  tileSize: number;
}

export interface WsiInfo {
  studyUid: string;
  levels: WsiLevel[];
}

export interface LinkedWsiResponse {
  study: StudySummary | null;
}
