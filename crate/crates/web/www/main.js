import init, { deriveParams, sfTrajectory, valleyGrid } from "./pkg/o2n_web.js";

const BOUNDS = [-2.5, 2.5, -1.25, 1.25];
const $ = (id) => document.getElementById(id);
const num = (id) => Number($(id).value);

let background = null;

function toCanvas(c, [x, y]) {
  const [x0, x1, y0, y1] = BOUNDS;
  return [((x - x0) / (x1 - x0)) * c.width, ((y1 - y) / (y1 - y0)) * c.height];
}

function drawBackground(c) {
  const ctx = c.getContext("2d");
  if (!background) {
    const grid = JSON.parse(valleyGrid(c.width, c.height, ...BOUNDS));
    const max = Math.max(...grid.values);
    background = ctx.createImageData(c.width, c.height);
    grid.values.forEach((v, i) => {
      const s = Math.sqrt(v / max);
      background.data.set([255 - 120 * s, 255 - 90 * s, 255 - 40 * s, 255], 4 * i);
    });
  }
  ctx.putImageData(background, 0, 0);
}

function path(ctx, c, pts, color, width) {
  ctx.strokeStyle = color;
  ctx.lineWidth = width;
  ctx.beginPath();
  pts.forEach((p, i) => {
    const [u, v] = toCanvas(c, p);
    i ? ctx.lineTo(u, v) : ctx.moveTo(u, v);
  });
  ctx.stroke();
}

function drawCurve(c, ts, values) {
  const ctx = c.getContext("2d");
  ctx.clearRect(0, 0, c.width, c.height);
  const pad = 32;
  const lx = ts.map(Math.log10);
  const [a, b] = [lx[0], Math.max(lx[lx.length - 1], lx[0] + 1e-9)];
  const top = Math.max(...values) * 1.05 || 1;
  const px = (l) => pad + ((l - a) / (b - a)) * (c.width - 2 * pad);
  const py = (v) => c.height - pad - (v / top) * (c.height - 2 * pad);
  ctx.strokeStyle = "#999";
  ctx.strokeRect(pad, pad, c.width - 2 * pad, c.height - 2 * pad);
  ctx.fillStyle = "#555";
  ctx.fillText(top.toPrecision(3), 2, pad + 4);
  ctx.fillText("0", 20, c.height - pad + 4);
  ctx.fillText(`t = ${ts[0]}`, pad, c.height - 10);
  ctx.fillText(`t = ${ts[ts.length - 1]} (log scale)`, c.width - pad - 120, c.height - 10);
  ctx.strokeStyle = "#2a7";
  ctx.lineWidth = 1.5;
  ctx.beginPath();
  values.forEach((v, i) => (i ? ctx.lineTo(px(lx[i]), py(v)) : ctx.moveTo(px(lx[i]), py(v))));
  ctx.stroke();
}

function showParams(json) {
  const p = JSON.parse(json);
  $("params").innerHTML = Object.entries(p)
    .filter(([, v]) => v !== null)
    .map(([k, v]) => `<tr><td>${k}</td><td>${typeof v === "number" ? v.toPrecision(6) : v}</td></tr>`)
    .join("");
}

function run() {
  $("error").textContent = "";
  try {
    showParams(deriveParams(num("eps"), num("lam"), Math.sqrt(5), num("sigma"), 16));
    const tr = JSON.parse(
      sfTrajectory(num("eps"), num("lam"), num("sigma"), num("steps"), num("seed"), num("sx"), num("sy"), num("gscale")),
    );
    const map = $("map");
    drawBackground(map);
    const ctx = map.getContext("2d");
    path(ctx, map, tr.z, "rgba(255,127,14,0.6)", 1);
    path(ctx, map, tr.x, "#1f77b4", 2);
    drawCurve($("cert"), tr.t, tr.certificate);
    $("summary").textContent =
      `expected certificate ${tr.expected_certificate.toPrecision(4)}, ` +
      `final certificate ${tr.certificate[tr.certificate.length - 1].toPrecision(4)}, ` +
      `F(x_T) = ${tr.final_loss.toPrecision(4)}, gamma = ${tr.gamma.toPrecision(3)}`;
  } catch (e) {
    $("error").textContent = String(e.message ?? e);
  }
}

await init();
$("go").addEventListener("click", run);
$("map").addEventListener("click", (ev) => {
  const c = ev.currentTarget;
  const r = c.getBoundingClientRect();
  const [x0, x1, y0, y1] = BOUNDS;
  $("sx").value = (x0 + ((ev.clientX - r.left) / c.width) * (x1 - x0)).toFixed(2);
  $("sy").value = (y1 - ((ev.clientY - r.top) / c.height) * (y1 - y0)).toFixed(2);
  run();
});
run();
