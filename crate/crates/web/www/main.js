import init, { discretizeCurve, impulseResponse, parameterCount, trainDemo } from "./pkg/mambatab_web.js";

const COLORS = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

function plot(canvas, series, xs) {
  const ctx = canvas.getContext("2d");
  const { width: w, height: h } = canvas;
  const pad = 30;
  ctx.clearRect(0, 0, w, h);
  const all = series.flat().filter(Number.isFinite);
  let lo = Math.min(0, ...all);
  let hi = Math.max(...all);
  if (hi - lo < 1e-12) hi = lo + 1;
  const x0 = xs[0];
  const x1 = xs[xs.length - 1] === x0 ? x0 + 1 : xs[xs.length - 1];
  const px = (x) => pad + ((x - x0) / (x1 - x0)) * (w - 2 * pad);
  const py = (y) => h - pad - ((y - lo) / (hi - lo)) * (h - 2 * pad);

  ctx.strokeStyle = "#999";
  ctx.beginPath();
  ctx.moveTo(pad, py(0));
  ctx.lineTo(w - pad, py(0));
  ctx.moveTo(pad, pad);
  ctx.lineTo(pad, h - pad);
  ctx.stroke();
  ctx.fillStyle = "#555";
  ctx.fillText(hi.toPrecision(3), 2, pad);
  ctx.fillText(lo.toPrecision(3), 2, h - pad);

  series.forEach((ys, k) => {
    ctx.strokeStyle = COLORS[k % COLORS.length];
    ctx.beginPath();
    ys.forEach((y, i) => (i ? ctx.lineTo(px(xs[i]), py(y)) : ctx.moveTo(px(xs[i]), py(y))));
    ctx.stroke();
  });
}

function drawDiscretize() {
  const flat = discretizeCurve(num("disc-a"), num("disc-b"), num("disc-dmax"), 200);
  const xs = [], ab = [], bb = [];
  for (let i = 0; i < flat.length; i += 3) {
    xs.push(flat[i]);
    ab.push(flat[i + 1]);
    bb.push(flat[i + 2]);
  }
  plot($("disc-canvas"), [ab, bb], xs);
}

function drawImpulse() {
  const as = $("imp-a").value.split(",").map(Number).filter(Number.isFinite);
  const len = Math.max(2, Math.floor(num("imp-len")));
  const flat = impulseResponse(new Float64Array(as), num("imp-delta"), len);
  const rows = as.map((_, k) => Array.from(flat.slice(k * len, (k + 1) * len)));
  plot($("imp-canvas"), rows, [...Array(len).keys()]);
}

function runTraining() {
  const out = $("tr-out");
  const n = num("tr-inf") + num("tr-noise");
  out.textContent = `training (${parameterCount(n, 32, 32, 2, 1)} parameters)...`;
  // let the message paint before the blocking call
  setTimeout(() => {
    try {
      const t0 = performance.now();
      const run = JSON.parse(trainDemo(num("tr-rows"), num("tr-inf"), num("tr-noise"), num("tr-seed"), num("tr-epochs")));
      const secs = (performance.now() - t0) / 1000;
      plot($("tr-canvas"), [run.train_loss, run.val_loss, run.val_auroc], run.train_loss.map((_, i) => i + 1));
      out.textContent =
        `epochs ${run.train_loss.length} (best ${run.best_epoch}), ${secs.toFixed(1)} s\n` +
        `parameters ${run.param_count}\n` +
        `test AUROC ${run.test_auroc.toFixed(4)}, accuracy ${run.test_accuracy.toFixed(4)}\n` +
        "blue: train loss, orange: val loss, green: val AUROC";
    } catch (e) {
      out.textContent = `error: ${e.message ?? e}`;
    }
  }, 20);
}

await init();
for (const id of ["disc-a", "disc-b", "disc-dmax"]) $(id).addEventListener("input", drawDiscretize);
for (const id of ["imp-delta", "imp-len", "imp-a"]) $(id).addEventListener("input", drawImpulse);
$("tr-run").addEventListener("click", runTraining);
drawDiscretize();
drawImpulse();
