import init, { MemoryDemo } from "./pkg/tracemem_wasm.js";

const SAMPLES = [
  `Maya: Hey Theo! I adopted a dog last weekend.
Theo: No way! What breed is it?
Maya: I have a border collie now. Her name is Pixel.
Theo: Border collies need a lot of exercise.
Maya: I walk her along the river trail every morning.
Theo: By the way, did you finish the pottery class?
Maya: I did. I made a blue glazed teapot for my final piece.`,
  `Theo: How is Pixel doing?
Maya: Great. I taught her to catch a frisbee in the park.
Theo: Also, any news at work?
Maya: I work at the Lindqvist bakery in Oslo now.
Maya: I mostly bake cardamom buns and sourdough bread.`,
  `Maya: Theo, I plan to visit Kyoto in October.
Theo: Kyoto is lovely in autumn. Are you going alone?
Maya: My sister Ines is coming with me.
Theo: Who will look after Pixel?
Maya: My neighbor Arjun agreed to take care of Pixel.`,
];

const $ = (id) => document.getElementById(id);
let demo;

function esc(s) {
  return s.replace(/[&<>"]/g, (c) => ({ "&": "&amp;", "<": "&lt;", ">": "&gt;", '"': "&quot;" })[c]);
}

function showStats() {
  const s = JSON.parse(demo.stats());
  $("stats").textContent =
    `${s.turns} turns, ${s.segments} segments, ${s.entities} entities, ${s.relation_edges} relations`;
}

function ingest(text) {
  try {
    const r = JSON.parse(demo.ingest(text));
    $("ingest-out").textContent =
      `${r.session_id}: ${r.turns} turns, ${r.segments} segments, ${r.retained} kept, ${r.triplets} facts`;
    $("ingest-out").className = "";
  } catch (e) {
    $("ingest-out").textContent = String(e);
    $("ingest-out").className = "err";
  }
  showStats();
}

function renderList(el, view, title, shared) {
  const items = view.ranked
    .map((t) => {
      const cls = shared && shared.includes(t.id) ? ' class="shared"' : "";
      return `<li${cls}><b>${esc(t.id)}</b> ${esc(t.speaker)}: ${esc(t.text)} <span class="score">${t.score.toFixed(4)}</span></li>`;
    })
    .join("");
  const facts = view.facts.length
    ? `<p><b>facts</b><br>${view.facts.map(esc).join("<br>")}</p>`
    : "";
  el.innerHTML =
    `<h3>${esc(title)}</h3><p class="muted">${view.nodes.length} nodes, ${view.edges.length} edges, ` +
    `${view.iterations} iterations${view.converged ? "" : " (not converged)"}, ${view.pagerank_ms.toFixed(2)} ms</p>` +
    `<ol>${items}</ol>${facts}`;
}

const ROWS = { segment: 50, turn: 180, entity: 310 };
const COLORS = { segment: "#7b61ff", turn: "#1f77b4", entity: "#2ca02c" };

function renderGraph(view) {
  const svg = $("graph");
  const pos = [];
  for (const kind of Object.keys(ROWS)) {
    const idx = view.nodes.map((n, i) => (n.kind === kind ? i : -1)).filter((i) => i >= 0);
    idx.forEach((i, k) => {
      pos[i] = { x: (1000 * (k + 1)) / (idx.length + 1), y: ROWS[kind] };
    });
  }
  const top = new Set(view.ranked.map((t) => t.id));
  const maxScore = Math.max(...view.nodes.map((n) => n.score), 1e-12);
  const lines = view.edges
    .map((e) => {
      const a = pos[e.a], b = pos[e.b];
      const op = (0.15 + 0.85 * e.weight).toFixed(3);
      const dash = e.kind === "relation" ? ' stroke-dasharray="4 3"' : "";
      return `<line x1="${a.x}" y1="${a.y}" x2="${b.x}" y2="${b.y}" stroke="#888" stroke-opacity="${op}"${dash}/>`;
    })
    .join("");
  const dots = view.nodes
    .map((n, i) => {
      const r = 3 + 14 * Math.sqrt(n.score / maxScore);
      const ring = top.has(n.id) ? ' stroke="#d62728" stroke-width="2"' : "";
      const label = n.kind === "entity" ? n.label : n.id;
      return `<g><title>${esc(n.id)} (${n.score.toFixed(4)}): ${esc(n.label)}</title>` +
        `<circle cx="${pos[i].x}" cy="${pos[i].y}" r="${r.toFixed(1)}" fill="${COLORS[n.kind]}"${ring}/>` +
        `<text x="${pos[i].x}" y="${pos[i].y + r + 11}" text-anchor="middle">${esc(label)}</text></g>`;
    })
    .join("");
  svg.innerHTML = lines + dots;
}

function run(compare) {
  $("query-err").textContent = "";
  const q = $("query").value;
  try {
    if (compare) {
      const c = JSON.parse(demo.compare(q));
      renderList($("left"), c.dynamic, "query-weighted edges", c.shared);
      renderList($("right"), c.uniform, "uniform edges", c.shared);
      renderGraph(c.dynamic);
    } else {
      const v = JSON.parse(demo.query(q, false));
      renderList($("left"), v, "query-weighted edges");
      $("right").innerHTML = "";
      renderGraph(v);
    }
  } catch (e) {
    $("query-err").textContent = String(e);
  }
}

await init();
demo = new MemoryDemo();
$("transcript").value = SAMPLES[0];
showStats();
$("ingest").onclick = () => ingest($("transcript").value);
$("sample").onclick = () => {
  SAMPLES.forEach(ingest);
  $("sample").disabled = true;
};
$("ask").onclick = () => run(false);
$("compare").onclick = () => run(true);
$("query").addEventListener("keydown", (e) => {
  if (e.key === "Enter") run(false);
});
