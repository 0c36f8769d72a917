import init, { planes, score, ml_curve } from "./pkg/planlens_web.js";

const $ = (id) => document.getElementById(id);
const num = (id) => parseFloat($(id).value);

function guarded(f) {
  return () => {
    $("error").textContent = "";
    try { f(); } catch (e) { $("error").textContent = e.message ?? String(e); }
  };
}

function drawPlanes() {
  const out = JSON.parse(planes($("fen").value, $("moves").value));
  $("planes-fen").textContent = `${out.fen} (${out.black_to_move ? "black" : "white"} to move, mirrored frame)`;
  const root = $("planes");
  root.replaceChildren();
  const n = Math.min(out.planes.length, parseInt($("plane-count").value, 10) || 13);
  for (let p = 0; p < n; p++) {
    const fig = document.createElement("figure");
    const grid = document.createElement("div");
    grid.className = "grid";
    for (let rank = 7; rank >= 0; rank--) {
      for (let file = 0; file < 8; file++) {
        const cell = document.createElement("div");
        const v = out.planes[p][rank * 8 + file];
        if (v > 0) cell.style.background = `rgba(30, 90, 200, ${Math.min(1, 0.25 + v)})`;
        grid.appendChild(cell);
      }
    }
    fig.appendChild(grid);
    const cap = document.createElement("figcaption");
    cap.textContent = `plane ${p}`;
    fig.appendChild(cap);
    root.appendChild(fig);
  }
}

function drawScores() {
  const rows = JSON.parse(score($("fen").value, $("moves").value, num("alpha"), num("beta"), num("gamma"), parseInt($("channels").value, 10)));
  const t = $("scores");
  t.innerHTML = "<tr><th>move</th><th>U</th><th>Q</th><th>M</th><th>P</th></tr>";
  for (const r of rows) {
    const tr = document.createElement("tr");
    if (r.best) tr.className = "best";
    for (const v of [r.san, r.u.toFixed(3), r.value.toFixed(3), r.ml_utility.toFixed(3), r.prior.toFixed(3)]) {
      const td = document.createElement("td");
      td.textContent = v;
      tr.appendChild(td);
    }
    t.appendChild(tr);
  }
}

function drawCurve() {
  const c = JSON.parse(ml_curve(num("mdiff"), num("vthr"), num("mmax"), num("mslope"), 201));
  const cv = $("plot");
  const ctx = cv.getContext("2d");
  ctx.clearRect(0, 0, cv.width, cv.height);
  const lim = Math.max(1, ...c.m.map(Math.abs));
  const x = (v) => ((v + 1) / 2) * (cv.width - 20) + 10;
  const y = (m) => cv.height / 2 - (m / lim) * (cv.height / 2 - 10);
  ctx.strokeStyle = "#aaa";
  ctx.beginPath();
  ctx.moveTo(0, y(0)); ctx.lineTo(cv.width, y(0));
  ctx.moveTo(x(0), 0); ctx.lineTo(x(0), cv.height);
  ctx.stroke();
  ctx.strokeStyle = "#1e5ac8";
  ctx.beginPath();
  c.v.forEach((v, i) => (i ? ctx.lineTo(x(v), y(c.m[i])) : ctx.moveTo(x(v), y(c.m[i]))));
  ctx.stroke();
  ctx.fillStyle = "#333";
  ctx.fillText(`v_child`, cv.width - 50, y(0) - 4);
  ctx.fillText(`M, max ${lim.toFixed(2)}`, x(0) + 4, 12);
}

await init();
$("show-planes").onclick = guarded(drawPlanes);
$("score").onclick = guarded(drawScores);
$("curve").onclick = guarded(drawCurve);
guarded(drawPlanes)();
guarded(drawCurve)();
