/** Bare-hands SVG assembly: scales, axes, polylines, legends. */

export interface Margins {
  top: number;
  right: number;
  bottom: number;
  left: number;
}

export const PALETTE = [
  "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
  "#17becf", "#7f7f7f",
];

export function esc(text: string): string {
  return text.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export class LinearScale {
  constructor(public lo: number, public hi: number,
              public rLo: number, public rHi: number) {
    if (hi === lo) {
      this.hi = lo + 1;
    }
  }
  map(v: number): number {
    return this.rLo + ((v - this.lo) / (this.hi - this.lo)) * (this.rHi - this.rLo);
  }
  ticks(n = 6): number[] {
    const out: number[] = [];
    for (let k = 0; k <= n; k++) {
      out.push(this.lo + ((this.hi - this.lo) * k) / n);
    }
    return out;
  }
}

export class Log10Scale {
  constructor(public lo: number, public hi: number,
              public rLo: number, public rHi: number) {
    if (hi <= lo) {
      this.hi = lo * 10;
    }
  }
  map(v: number): number {
    const clamped = Math.max(v, this.lo);
    const t = (Math.log10(clamped) - Math.log10(this.lo)) /
      (Math.log10(this.hi) - Math.log10(this.lo));
    return this.rLo + t * (this.rHi - this.rLo);
  }
  ticks(): number[] {
    const out: number[] = [];
    const first = Math.ceil(Math.log10(this.lo));
    const last = Math.floor(Math.log10(this.hi));
    for (let e = first; e <= last; e++) {
      out.push(10 ** e);
    }
    if (out.length === 0) {
      out.push(this.lo, this.hi);
    }
    return out;
  }
}

export function line(x1: number, y1: number, x2: number, y2: number,
                     stroke = "#333", width = 1): string {
  return `<line x1="${x1.toFixed(2)}" y1="${y1.toFixed(2)}" ` +
    `x2="${x2.toFixed(2)}" y2="${y2.toFixed(2)}" ` +
    `stroke="${stroke}" stroke-width="${width}"/>`;
}

export function text(x: number, y: number, content: string,
                     opts: { size?: number; anchor?: string; rotate?: number } = {}
): string {
  const size = opts.size ?? 11;
  const anchor = opts.anchor ?? "start";
  const transform = opts.rotate
    ? ` transform="rotate(${opts.rotate} ${x.toFixed(1)} ${y.toFixed(1)})"`
    : "";
  return `<text x="${x.toFixed(2)}" y="${y.toFixed(2)}" font-size="${size}" ` +
    `font-family="sans-serif" text-anchor="${anchor}"${transform}>` +
    `${esc(content)}</text>`;
}

export function polyline(points: [number, number][], stroke: string,
                         width = 1.5, dash = ""): string {
  const coords = points.map(([x, y]) => `${x.toFixed(2)},${y.toFixed(2)}`).join(" ");
  const dashAttr = dash ? ` stroke-dasharray="${dash}"` : "";
  return `<polyline points="${coords}" fill="none" stroke="${stroke}" ` +
    `stroke-width="${width}"${dashAttr}/>`;
}

export function circle(x: number, y: number, r: number, fill: string): string {
  return `<circle cx="${x.toFixed(2)}" cy="${y.toFixed(2)}" r="${r}" fill="${fill}"/>`;
}

export function rect(x: number, y: number, w: number, h: number, fill: string,
                     opts: { opacity?: number; hatch?: boolean } = {}): string {
  const opacity = opts.opacity !== undefined ? ` fill-opacity="${opts.opacity}"` : "";
  return `<rect x="${x.toFixed(2)}" y="${y.toFixed(2)}" width="${w.toFixed(2)}" ` +
    `height="${h.toFixed(2)}" fill="${fill}"${opacity} stroke="#333" stroke-width="0.5"/>`;
}

export function document(width: number, height: number, body: string[]): string {
  return [
    `<svg xmlns="http://www.w3.org/2000/svg" width="${width}" height="${height}" ` +
    `viewBox="0 0 ${width} ${height}">`,
    `<rect x="0" y="0" width="${width}" height="${height}" fill="white"/>`,
    ...body,
    "</svg>",
  ].join("\n");
}
