import init, { calming_curve, riccati_curve, Playground } from "./pkg/calmed_mhdb_demo.js";

const $ = (id) => document.getElementById(id);

function axes(ctx, w, h) {
  ctx.clearRect(0, 0, w, h);
  ctx.strokeStyle = "#ddd";
  ctx.beginPath();
  ctx.moveTo(40, h - 30);
  ctx.lineTo(w - 10, h - 30);
  ctx.moveTo(40, 10);
  ctx.lineTo(40, h - 30);
  ctx.stroke();
}

function polyline(ctx, xs, ys, toX, toY, color) {
  ctx.strokeStyle = color;
  ctx.beginPath();
  let started = false;
  for (let i = 0; i < xs.length; i++) {
    if (!Number.isFinite(ys[i])) { started = false; continue; }
    const px = toX(xs[i]);
    const py = toY(ys[i]);
    if (started) ctx.lineTo(px, py); else ctx.moveTo(px, py);
    started = true;
  }
  ctx.stroke();
}

function drawCalming() {
  const eps = 10 ** Number($("cf-eps").value);
  $("cf-eps-out").value = eps.toPrecision(3);
  const xMax = 4 / eps;
  const data = calming_curve($("cf-family").value, eps, xMax, 400);
  const xs = [], z = [], gap = [];
  for (let i = 0; i < data.length; i += 3) { xs.push(data[i]); z.push(data[i + 1]); gap.push(data[i + 2]); }
  const c = $("cf-plot"), ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const toX = (x) => 40 + (x / xMax) * (c.width - 50);
  const toY = (y) => c.height - 30 - (y / xMax) * (c.height - 40);
  polyline(ctx, xs, xs, toX, toY, "#aaa");
  polyline(ctx, xs, gap, toX, toY, "#c33");
  polyline(ctx, xs, z, toX, toY, "#000");
}

function drawRiccati() {
  const eps = 10 ** Number($("rc-eps").value);
  $("rc-eps-out").value = eps.toPrecision(3);
  const tMax = 3;
  const calm = riccati_curve(1, eps, tMax, 600);
  const raw = riccati_curve(1, 0, tMax, 600);
  const split = (d) => { const t = [], y = []; for (let i = 0; i < d.length; i += 2) { t.push(d[i]); y.push(Math.log10(d[i + 1])); } return [t, y]; };
  const [t, yc] = split(calm);
  const [, yr] = split(raw);
  const c = $("rc-plot"), ctx = c.getContext("2d");
  axes(ctx, c.width, c.height);
  const yTop = 9;
  const toX = (x) => 40 + (x / tMax) * (c.width - 50);
  const toY = (y) => c.height - 30 - (Math.min(y, yTop) / yTop) * (c.height - 40);
  polyline(ctx, t, yr, toX, toY, "#aaa");
  polyline(ctx, t, yc, toX, toY, "#000");
  ctx.fillStyle = "#666";
  ctx.fillText("10^" + yTop, 5, 15);
  ctx.fillText("1", 25, c.height - 30);
}

let sim = null;
let running = false;

function resetSim() {
  $("pg-error").textContent = "";
  try {
    sim = new Playground(48, $("pg-family").value, Number($("pg-eps").value), $("pg-initial").value, 0.004);
  } catch (e) {
    sim = null;
    $("pg-error").textContent = String(e);
  }
  drawTheta();
}

function drawTheta() {
  if (!sim) return;
  const n = sim.n();
  const theta = sim.theta();
  let lo = Infinity, hi = -Infinity;
  for (const v of theta) { lo = Math.min(lo, v); hi = Math.max(hi, v); }
  const span = hi - lo || 1;
  const c = $("pg-theta"), ctx = c.getContext("2d");
  const img = ctx.createImageData(n, n);
  for (let i2 = 0; i2 < n; i2++) {
    for (let i1 = 0; i1 < n; i1++) {
      const s = (theta[i2 * n + i1] - lo) / span;
      const p = 4 * ((n - 1 - i2) * n + i1);
      img.data[p] = 255 * s;
      img.data[p + 1] = 80 + 100 * s * (1 - s);
      img.data[p + 2] = 255 * (1 - s);
      img.data[p + 3] = 255;
    }
  }
  const tmp = new OffscreenCanvas(n, n);
  tmp.getContext("2d").putImageData(img, 0, 0);
  ctx.imageSmoothingEnabled = false;
  ctx.drawImage(tmp, 0, 0, c.width, c.height);
  $("pg-time").value = sim.time().toFixed(3);
  $("pg-energy").value = sim.energy().toExponential(5);
}

function tick() {
  if (!running || !sim) return;
  try {
    sim.advance(5);
  } catch (e) {
    running = false;
    $("pg-run").textContent = "run";
    $("pg-error").textContent = String(e);
  }
  drawTheta();
  requestAnimationFrame(tick);
}

await init();
for (const id of ["cf-family", "cf-eps"]) $(id).addEventListener("input", drawCalming);
$("rc-eps").addEventListener("input", drawRiccati);
$("pg-reset").addEventListener("click", resetSim);
$("pg-run").addEventListener("click", () => {
  running = !running;
  $("pg-run").textContent = running ? "pause" : "run";
  if (running) requestAnimationFrame(tick);
});
drawCalming();
drawRiccati();
resetSim();
