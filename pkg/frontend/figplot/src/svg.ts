/**
 * Minimal deterministic SVG chart renderer.
 *
 * All geometry is formatted with fixed precision so that identical inputs
 * produce byte-identical files; no timestamps, no randomness.
 */

export interface Series {
  label: string;
  x: number[];
  y: number[];
}

export interface PanelOptions {
  title: string;
  xLabel: string;
  yLabel: string;
  yScale: "linear" | "log";
  hLines?: { label: string; y: number }[];
}

const W = 640;
const H = 400;
const M = { left: 70, right: 20, top: 36, bottom: 46 };
const PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

const fmt = (v: number) => (Object.is(v, -0) ? 0 : v).toFixed(2);

function niceTicks(lo: number, hi: number, n = 5): number[] {
  if (!(hi > lo)) return [lo];
  const span = hi - lo;
  const step0 = span / n;
  const mag = Math.pow(10, Math.floor(Math.log10(step0)));
  const step = [1, 2, 5, 10].map((m) => m * mag).find((s) => span / s <= n) ?? mag * 10;
  const start = Math.ceil(lo / step) * step;
  const ticks: number[] = [];
  for (let t = start; t <= hi + 1e-12 * span; t += step) ticks.push(t);
  return ticks;
}

function logTicks(lo: number, hi: number): number[] {
  const ticks: number[] = [];
  for (let p = Math.ceil(Math.log10(lo)); p <= Math.floor(Math.log10(hi)); p++) {
    ticks.push(Math.pow(10, p));
  }
  return ticks.length ? ticks : [lo];
}

function tickLabel(v: number): string {
  if (v === 0) return "0";
  const a = Math.abs(v);
  if (a >= 0.01 && a < 10000) {
    return String(Number(v.toPrecision(6)));
  }
  return v.toExponential(0).replace("+", "");
}

export function renderPanel(series: Series[], opts: PanelOptions): string {
  const log = opts.yScale === "log";
  const xs = series.flatMap((s) => s.x);
  const ysAll = series.flatMap((s) => s.y).concat((opts.hLines ?? []).map((h) => h.y));
  const ys = log ? ysAll.filter((v) => v > 0) : ysAll;
  if (log && ys.length < ysAll.length) {
    throw new Error("log scale requires strictly positive data");
  }
  const xLo = Math.min(...xs);
  const xHi = Math.max(...xs);
  let yLo = Math.min(...ys);
  let yHi = Math.max(...ys);
  if (yLo === yHi) {
    yLo -= 0.5;
    yHi += 0.5;
  }
  const tx = (x: number) =>
    M.left + ((x - xLo) / (xHi - xLo || 1)) * (W - M.left - M.right);
  const ty = (y: number) => {
    const v = log ? Math.log10(y) : y;
    const lo = log ? Math.log10(yLo) : yLo;
    const hi = log ? Math.log10(yHi) : yHi;
    return H - M.bottom - ((v - lo) / (hi - lo || 1)) * (H - M.top - M.bottom);
  };

  const parts: string[] = [];
  parts.push(
    `<svg xmlns="http://www.w3.org/2000/svg" width="${W}" height="${H}" viewBox="0 0 ${W} ${H}">`,
    `<rect width="${W}" height="${H}" fill="white"/>`,
    `<text x="${W / 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">${opts.title}</text>`
  );

  // axes
  parts.push(
    `<line x1="${M.left}" y1="${H - M.bottom}" x2="${W - M.right}" y2="${H - M.bottom}" stroke="black"/>`,
    `<line x1="${M.left}" y1="${M.top}" x2="${M.left}" y2="${H - M.bottom}" stroke="black"/>`
  );
  for (const t of niceTicks(xLo, xHi)) {
    const px = fmt(tx(t));
    parts.push(
      `<line x1="${px}" y1="${H - M.bottom}" x2="${px}" y2="${H - M.bottom + 5}" stroke="black"/>`,
      `<text x="${px}" y="${H - M.bottom + 18}" text-anchor="middle" font-family="sans-serif" font-size="11">${tickLabel(t)}</text>`
    );
  }
  for (const t of log ? logTicks(yLo, yHi) : niceTicks(yLo, yHi)) {
    const py = fmt(ty(t));
    parts.push(
      `<line x1="${M.left - 5}" y1="${py}" x2="${M.left}" y2="${py}" stroke="black"/>`,
      `<text x="${M.left - 8}" y="${py}" text-anchor="end" dominant-baseline="middle" font-family="sans-serif" font-size="11">${tickLabel(t)}</text>`
    );
  }
  parts.push(
    `<text x="${(M.left + W - M.right) / 2}" y="${H - 10}" text-anchor="middle" font-family="sans-serif" font-size="12">${opts.xLabel}</text>`,
    `<text x="16" y="${(M.top + H - M.bottom) / 2}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 ${(M.top + H - M.bottom) / 2})">${opts.yLabel}</text>`
  );

  // reference lines
  for (const [i, hl] of (opts.hLines ?? []).entries()) {
    const py = fmt(ty(hl.y));
    parts.push(
      `<line x1="${M.left}" y1="${py}" x2="${W - M.right}" y2="${py}" stroke="gray" stroke-dasharray="5,4"/>`,
      `<text x="${W - M.right - 4}" y="${fmt(Number(py) - 4 - 12 * i)}" text-anchor="end" font-family="sans-serif" font-size="10" fill="gray">${hl.label}</text>`
    );
  }

  // curves + legend
  series.forEach((s, i) => {
    const color = PALETTE[i % PALETTE.length];
    const pts = s.x.map((x, j) => `${fmt(tx(x))},${fmt(ty(s.y[j]))}`).join(" ");
    parts.push(`<polyline points="${pts}" fill="none" stroke="${color}" stroke-width="1.5"/>`);
    const ly = M.top + 14 + 16 * i;
    parts.push(
      `<line x1="${W - M.right - 120}" y1="${ly - 4}" x2="${W - M.right - 96}" y2="${ly - 4}" stroke="${color}" stroke-width="1.5"/>`,
      `<text x="${W - M.right - 90}" y="${ly}" font-family="sans-serif" font-size="12">${s.label}</text>`
    );
  });

  parts.push("</svg>");
  return parts.join("\n") + "\n";
}
