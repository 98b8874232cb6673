import init, { build_graph, propagation, score_bleu } from "./pkg/docgraph_web.js";

const $ = (id) => document.getElementById(id);
const SVG = "http://www.w3.org/2000/svg";

function el(name, attrs = {}, text) {
  const e = document.createElementNS(SVG, name);
  for (const [k, v] of Object.entries(attrs)) e.setAttribute(k, v);
  if (text !== undefined) e.textContent = text;
  return e;
}

function guard(f) {
  return () => {
    $("error").textContent = "";
    try {
      f();
    } catch (e) {
      $("error").textContent = e.message ?? String(e);
    }
  };
}

// Words on one row per sentence; edges as arcs above (forward) or below
// (backward) the words.
function drawGraph() {
  const view = JSON.parse(build_graph($("text").value, $("relations").value, +$("sentence").value, +$("radius").value));
  const kept = new Set(view.kept);
  const step = 70, rowHeight = 110, pad = 40;
  const pos = new Map();
  let width = 0, rows = 0;
  for (const n of view.graph.nodes) {
    const x = pad + n.word * step, y = pad + 40 + n.sentence * rowHeight;
    pos.set(n.id, [x, y]);
    width = Math.max(width, x + pad);
    rows = Math.max(rows, n.sentence + 1);
  }
  const svg = el("svg", { width, height: pad + rows * rowHeight });
  for (const [src, dst, label] of view.graph.edges) {
    const [x1, y1] = pos.get(src), [x2, y2] = pos.get(dst);
    const dir = src < dst ? -1 : 1;
    const lift = dir * (18 + Math.min(40, Math.hypot(x2 - x1, y2 - y1) / 6));
    const d = `M${x1},${y1 + dir * 12} Q${(x1 + x2) / 2},${(y1 + y2) / 2 + lift} ${x2},${y2 + dir * 12}`;
    const cls = kept.has(src) && kept.has(dst) ? label : `${label} outside`;
    svg.append(el("path", { d, fill: "none", class: cls, "stroke-width": 1.4 }));
    svg.append(el("circle", { cx: x2, cy: y2 + dir * 12, r: 2.5, class: cls }));
  }
  for (const n of view.graph.nodes) {
    const [x, y] = pos.get(n.id);
    svg.append(el("text", { x, y: y + 4, "text-anchor": "middle", class: kept.has(n.id) ? "" : "outside" }, n.surface));
  }
  $("graph").replaceChildren(svg);
}

function drawMatrix() {
  const m = JSON.parse(propagation($("text").value, $("relations").value, $("direction").value));
  const table = document.createElement("table");
  table.className = "heat";
  const head = table.insertRow();
  head.append(document.createElement("th"));
  for (const w of m.words) {
    const th = document.createElement("th");
    th.textContent = w;
    head.append(th);
  }
  m.normalized.forEach((row, i) => {
    const tr = table.insertRow();
    const th = document.createElement("th");
    th.textContent = `${m.words[i]} (${m.degree[i]})`;
    tr.append(th);
    for (const v of row) {
      const td = tr.insertCell();
      td.textContent = v === 0 ? "" : v.toFixed(2);
      td.style.background = `rgba(31, 119, 180, ${Math.min(1, v)})`;
      td.style.color = v > 0.5 ? "white" : "black";
    }
  });
  $("matrix").replaceChildren(table);
}

function drawBleu() {
  const r = JSON.parse(score_bleu($("hyp").value, $("ref").value, $("mode").value, $("smooth").checked));
  const p = r.precisions.map((x) => (100 * x).toFixed(1)).join("/");
  $("bleu").textContent = `BLEU = ${r.score.toFixed(2)} (${p}) BP = ${r.brevity_penalty.toFixed(3)} hyp_len = ${r.hyp_len} ref_len = ${r.ref_len}`;
}

await init();
$("graph-go").onclick = guard(drawGraph);
$("matrix-go").onclick = guard(drawMatrix);
$("bleu-go").onclick = guard(drawBleu);
guard(drawGraph)();
guard(drawMatrix)();
guard(drawBleu)();
