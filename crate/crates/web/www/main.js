import init, { simulate, compare, scenario } from "./pkg/chiarella_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function plot(canvas, series, opts = {}) {
  const dpr = window.devicePixelRatio || 1;
  const w = canvas.clientWidth, h = canvas.clientHeight;
  canvas.width = w * dpr;
  canvas.height = h * dpr;
  const g = canvas.getContext("2d");
  g.scale(dpr, dpr);
  g.clearRect(0, 0, w, h);
  const pad = { l: 48, r: 8, t: 8, b: 20 };
  const finite = series.flatMap((s) => s.y.filter(Number.isFinite));
  let lo = Math.min(...finite, ...(opts.hlines || []));
  let hi = Math.max(...finite, ...(opts.hlines || []));
  if (lo === hi) { lo -= 1; hi += 1; }
  const n = Math.max(...series.map((s) => s.y.length));
  const x0 = opts.x0 ?? 0;
  const sx = (i) => pad.l + ((i) / Math.max(n - 1, 1)) * (w - pad.l - pad.r);
  const sy = (v) => pad.t + (1 - (v - lo) / (hi - lo)) * (h - pad.t - pad.b);

  g.strokeStyle = "#ccc";
  g.fillStyle = "#666";
  g.font = "11px system-ui";
  g.beginPath();
  g.moveTo(pad.l, pad.t);
  g.lineTo(pad.l, h - pad.b);
  g.lineTo(w - pad.r, h - pad.b);
  g.stroke();
  for (const v of [lo, (lo + hi) / 2, hi]) g.fillText(v.toPrecision(3), 2, sy(v) + 4);
  g.fillText(String(x0), pad.l, h - 5);
  g.fillText(String(x0 + n - 1), w - pad.r - 20, h - 5);

  for (const v of opts.hlines || []) {
    g.setLineDash([4, 4]);
    g.strokeStyle = "#999";
    g.beginPath();
    g.moveTo(pad.l, sy(v));
    g.lineTo(w - pad.r, sy(v));
    g.stroke();
    g.setLineDash([]);
  }
  for (const s of series) {
    g.strokeStyle = s.color;
    g.lineWidth = s.width || 1.2;
    g.beginPath();
    let pen = false;
    s.y.forEach((v, i) => {
      if (!Number.isFinite(v)) { pen = false; return; }
      pen ? g.lineTo(sx(i), sy(v)) : g.moveTo(sx(i), sy(v));
      pen = true;
    });
    g.stroke();
  }
}

function theta() {
  return [num("kappa"), num("beta"), num("sigma_n")];
}

function guard(fn) {
  try {
    fn();
    $("error").textContent = "";
  } catch (e) {
    $("error").textContent = String(e);
  }
}

function drawDay() {
  guard(() => {
    const d = JSON.parse(simulate(...theta(), num("fsd"), num("seed")));
    plot($("day"), [
      { y: d.fundamental, color: "#aaa" },
      { y: d.prices, color: "#1f77b4" },
    ]);
    const k = d.excess_kurtosis == null ? "n/a" : d.excess_kurtosis.toFixed(3);
    $("day-stats").textContent = `return volatility ${d.volatility.toFixed(4)}, excess kurtosis ${k}`;
  });
}

function drawCompare() {
  guard(() => {
    const c = JSON.parse(compare(...theta(), num("dayseed"), num("seed")));
    plot($("cmp-prices"), [
      { y: c.hist_prices, color: "#444" },
      { y: c.sim_prices, color: "#d62728" },
    ]);
    plot($("cmp-acf"), [
      { y: c.hist_squared_acf, color: "#444" },
      { y: c.sim_squared_acf, color: "#d62728" },
    ], { x0: 1, hlines: [0] });
    const rows = [
      ["KS statistic", c.ks],
      ["volatility gap", c.vol_gap],
      ["return ACF gap", c.acf1_gap],
      ["squared-return ACF gap", c.acf2_gap],
      ["total" + (c.degenerate ? " (degenerate)" : ""), c.total],
    ];
    $("dist").innerHTML = rows.map(([k, v]) => `<tr><th>${k}</th><td>${v.toFixed(5)}</td></tr>`).join("");
  });
}

function drawScenario() {
  guard(() => {
    const s = JSON.parse(scenario(...theta(), num("gsig"), num("paths"), num("seed")));
    plot($("sc-path"), [
      { y: s.gbm_path, color: "#aaa" },
      { y: s.model_path, color: "#2ca02c" },
    ]);
    plot($("sc-acf"), [
      { y: s.gbm, color: "#aaa" },
      { y: s.model, color: "#2ca02c" },
    ], { x0: 1, hlines: [s.band, -s.band, 0] });
  });
}

function showValues() {
  for (const o of document.querySelectorAll("output")) o.textContent = $(o.htmlFor.value).value;
}

function redraw() {
  showValues();
  drawDay();
  drawCompare();
  drawScenario();
}

await init();
for (const id of ["kappa", "beta", "sigma_n", "seed"]) $(id).addEventListener("input", redraw);
$("fsd").addEventListener("input", () => { showValues(); drawDay(); });
$("dayseed").addEventListener("input", drawCompare);
for (const id of ["gsig", "paths"]) $(id).addEventListener("input", () => { showValues(); drawScenario(); });
window.addEventListener("resize", redraw);
redraw();
