import { ApiClient } from "./api.js";
import { DASH_PATTERN, FILL_COLOR, STROKE_COLOR } from "./overlay.js";
import * as st from "./state.js";
import { visibleTiles } from "./tiles.js";
import type { StudySummary } from "./types.js";

/** DOM shell around the pure state machine: every interaction dispatches a
 * transition and re-renders; async responses are applied through the
 * sequence-checked handlers so stale fetches are discarded. */
export class ViewerApp {
  private state = st.initialState();

  constructor(private api: ApiClient, private root: HTMLElement) {}

  async start(): Promise<void> {
    this.render();
    try {
      const studies = await this.api.listStudies();
      this.state = st.withStudies(this.state, studies);
    } catch (err) {
      this.state = st.withNotice(this.state, `cannot reach link API: ${err}`);
    }
    this.render();
  }

  private async selectStudy(study: StudySummary): Promise<void> {
    this.state = st.beginStudySelection(this.state, study.studyUid);
    const seq = this.state.seq;
    this.render();
    try {
      const series = await this.api.listSeries(study.studyUid);
      this.state = st.withSeries(this.state, seq, series);
      await this.loadRegions(seq);
    } catch (err) {
      this.state = st.withNotice(this.state, String(err));
    }
    this.render();
  }

  private async loadRegions(seq: number): Promise<void> {
    const series = this.state.currentSeries;
    if (!series || st.isStale(this.state, seq)) {
      return;
    }
    try {
      const resp = await this.api.regions(series, this.state.sliceIndex);
      this.state = st.withRegions(this.state, seq, resp);
    } catch (err) {
      this.state = st.regionsUnavailable(this.state, seq, `overlay unavailable: ${err}`);
    }
  }

  private async changeSlice(delta: number): Promise<void> {
    const before = this.state.sliceIndex;
    this.state = st.setSlice(this.state, this.state.sliceIndex + delta);
    if (this.state.sliceIndex !== before) {
      const seq = this.state.seq;
      this.render();
      await this.loadRegions(seq);
      this.render();
    }
  }

  private async clickRegion(regionId: number): Promise<void> {
    const study = this.state.selectedStudy;
    if (!study) {
      return;
    }
    try {
      const linked = await this.api.linkedWsi(study, regionId);
      if (linked.study) {
        this.state = st.wsiLinked(this.state, linked.study.studyUid);
        const seq = this.state.seq;
        this.render();
        const info = await this.api.wsiInfo(linked.study.studyUid);
        this.state = st.withWsiInfo(this.state, seq, info);
      } else {
        this.state = st.wsiLinkAbsent(this.state);
      }
    } catch (err) {
      this.state = st.withNotice(this.state, String(err));
    }
    this.render();
  }

  // ---- rendering ----------------------------------------------------

  private render(): void {
    this.root.replaceChildren(
      this.renderNotice(),
      this.renderStudyTable(),
      this.renderSplit(),
    );
  }

  private renderNotice(): HTMLElement {
    const el = document.createElement("div");
    el.className = "notice";
    el.textContent = this.state.notice ?? "";
    el.style.display = this.state.notice ? "block" : "none";
    return el;
  }

  private renderStudyTable(): HTMLElement {
    const table = document.createElement("table");
    table.className = "study-table";
    const head = table.createTHead().insertRow();
    for (const title of ["Patient", "Name", "Description", "Modalities", "Date"]) {
      const th = document.createElement("th");
      th.textContent = title;
      head.appendChild(th);
    }
    const body = table.createTBody();
    for (const study of this.state.studies) {
      const row = body.insertRow();
      row.className = study.studyUid === this.state.selectedStudy ? "selected" : "";
      row.insertCell().textContent = study.patientId;
      row.insertCell().textContent = study.patientName;
      row.insertCell().textContent = study.studyDescription;
      row.insertCell().textContent = study.modalities.join(", ");
      row.insertCell().textContent = study.studyDate ?? "";
      row.addEventListener("click", () => void this.selectStudy(study));
    }
    return table;
  }

  private renderSplit(): HTMLElement {
    const split = document.createElement("div");
    split.className = "split";
    split.appendChild(this.renderWsiPane());
    split.appendChild(this.renderRadiologyPane());
    return split;
  }

  private renderRadiologyPane(): HTMLElement {
    const pane = document.createElement("div");
    pane.className = "pane radiology-pane";
    if (this.state.layout.right !== "radiology" || !this.state.currentSeries) {
      pane.classList.add("empty");
      pane.textContent = "select a radiological study";
      return pane;
    }

    const stage = document.createElement("div");
    stage.className = "stage";
    const img = document.createElement("img");
    img.className = "frame";
    img.src = this.api.frameUrl(this.state.currentSeries, this.state.sliceIndex);
    img.style.transform =
      `scale(${this.state.zoom}) translate(${-this.state.pan.x}px, ${-this.state.pan.y}px)`;
    stage.appendChild(img);

    for (const rect of this.state.screenRegions) {
      stage.appendChild(this.renderRegionBox(rect.id, rect.label, rect.x, rect.y,
                                             rect.w, rect.h));
    }

    if (this.state.regionNotice) {
      const warn = document.createElement("div");
      warn.className = "region-notice";
      warn.textContent = this.state.regionNotice;
      stage.appendChild(warn);
    }

    return this.finishRadiologyPane(pane, stage);
  }

  /** One clickable overlay target: semi-transparent fill plus an SVG rect
   * carrying the exact dash pattern (CSS borders cannot express it). */
  private renderRegionBox(id: number, label: string, x: number, y: number,
                          w: number, h: number): HTMLElement {
    const box = document.createElement("div");
    box.className = "region";
    box.style.left = `${x}px`;
    box.style.top = `${y}px`;
    box.style.width = `${w}px`;
    box.style.height = `${h}px`;
    box.style.backgroundColor = FILL_COLOR;

    const svg = document.createElementNS("http://www.w3.org/2000/svg", "svg");
    svg.setAttribute("width", "100%");
    svg.setAttribute("height", "100%");
    const outline = document.createElementNS("http://www.w3.org/2000/svg", "rect");
    outline.setAttribute("x", "1");
    outline.setAttribute("y", "1");
    outline.setAttribute("width", String(Math.max(w - 2, 0)));
    outline.setAttribute("height", String(Math.max(h - 2, 0)));
    outline.setAttribute("fill", "none");
    outline.setAttribute("stroke", STROKE_COLOR);
    outline.setAttribute("stroke-width", "2");
    outline.setAttribute("stroke-dasharray", DASH_PATTERN.join(" "));
    svg.appendChild(outline);
    box.appendChild(svg);

    const tag = document.createElement("span");
    tag.className = "region-label";
    tag.textContent = label;
    box.appendChild(tag);
    box.addEventListener("click", (ev) => {
      ev.stopPropagation();
      void this.clickRegion(id);
    });
    return box;
  }

  private finishRadiologyPane(pane: HTMLElement, stage: HTMLElement): HTMLElement {
    stage.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      void this.changeSlice(ev.deltaY > 0 ? 1 : -1);
    });

    const bar = document.createElement("div");
    bar.className = "bar";
    bar.textContent =
      `slice ${this.state.sliceIndex + 1}/${Math.max(this.state.sliceCount, 1)} ` +
      `zoom ${this.state.zoom.toFixed(1)}x`;
    const zoomIn = document.createElement("button");
    zoomIn.textContent = "+";
    zoomIn.addEventListener("click", () => {
      this.state = st.setZoom(this.state, this.state.zoom * 2);
      this.render();
    });
    const zoomOut = document.createElement("button");
    zoomOut.textContent = "-";
    zoomOut.addEventListener("click", () => {
      this.state = st.setZoom(this.state, this.state.zoom / 2);
      this.render();
    });
    bar.append(zoomOut, zoomIn);

    pane.append(bar, stage);
    return pane;
  }

  private renderWsiPane(): HTMLElement {
    const pane = document.createElement("div");
    pane.className = "pane wsi-pane";
    if (this.state.layout.left !== "wsi" || !this.state.linkedWsi) {
      pane.classList.add("empty");
      pane.textContent = "pathology appears here after a region click";
      return pane;
    }
    const info = this.state.wsiInfo;
    const bar = document.createElement("div");
    bar.className = "bar";
    bar.textContent = info
      ? `level ${this.state.wsiLevel + 1}/${info.levels.length}`
      : "loading pyramid";
    pane.appendChild(bar);

    const stage = document.createElement("div");
    stage.className = "stage wsi-stage";
    if (info) {
      const level = info.levels[this.state.wsiLevel];
      const vp = this.state.wsiViewport;
      for (const tile of visibleTiles(vp, level)) {
        const img = document.createElement("img");
        img.className = "tile";
        img.src = this.api.tileUrl(this.state.linkedWsi, level.level, tile.x, tile.y);
        img.style.left = `${tile.x * level.tileSize - vp.x}px`;
        img.style.top = `${tile.y * level.tileSize - vp.y}px`;
        img.addEventListener("error", () => img.classList.add("missing"));
        stage.appendChild(img);
      }
      stage.addEventListener("wheel", (ev) => {
        ev.preventDefault();
        this.state = st.changeWsiLevel(this.state, ev.deltaY < 0 ? 1 : -1);
        this.render();
      });
      let drag: { x: number; y: number } | null = null;
      stage.addEventListener("mousedown", (ev) => {
        drag = { x: ev.clientX, y: ev.clientY };
      });
      stage.addEventListener("mousemove", (ev) => {
        if (drag) {
          this.state = st.panWsi(this.state, drag.x - ev.clientX, drag.y - ev.clientY);
          drag = { x: ev.clientX, y: ev.clientY };
          this.render();
        }
      });
      stage.addEventListener("mouseup", () => {
        drag = null;
      });
    }
    pane.appendChild(stage);
    return pane;
  }
}

export function dashPatternCss(): string {
  return DASH_PATTERN.join(" ");
}

declare global {
  interface Window {
    RADPATHLINK_API?: string;
  }
}

if (typeof document !== "undefined" && document.getElementById("app")) {
  const base = window.RADPATHLINK_API ?? "";
  const app = new ViewerApp(new ApiClient(base), document.getElementById("app")!);
  void app.start();
}
