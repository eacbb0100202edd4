import init, { Arm, HandLab, Playback } from "./pkg/tileil_web.js";

const $ = (id) => document.getElementById(id);
const STATUS = ["resting", "attached", "installed", "fallen"];
const STATUS_COLOR = ["#888", "#2a7", "#27c", "#c33"];

// Orthographic view mapping two world axes onto a canvas.
function view(canvas, axes, center, scale) {
  const [a, b] = axes;
  return {
    ctx: canvas.getContext("2d"),
    to: (p) => [canvas.width / 2 + (p[a] - center[0]) * scale, canvas.height / 2 - (p[b] - center[1]) * scale],
    from: (x, y) => [center[0] + (x - canvas.width / 2) / scale, center[1] - (y - canvas.height / 2) / scale],
    clear() { this.ctx.clearRect(0, 0, canvas.width, canvas.height); },
  };
}

const triples = (flat) => Array.from({ length: flat.length / 3 }, (_, i) => [flat[3 * i], flat[3 * i + 1], flat[3 * i + 2]]);

function polyline(v, pts, color, width = 3) {
  const c = v.ctx;
  c.strokeStyle = color;
  c.lineWidth = width;
  c.beginPath();
  pts.forEach((p, i) => (i ? c.lineTo(...v.to(p)) : c.moveTo(...v.to(p))));
  c.stroke();
}

function dot(v, p, color, r = 4) {
  const c = v.ctx;
  c.fillStyle = color;
  c.beginPath();
  c.arc(...v.to(p), r, 0, 2 * Math.PI);
  c.fill();
}

function setupArm() {
  const arm = new Arm();
  const side = view($("arm-side"), [0, 2], [0, 0.25], 420);
  const top = view($("arm-top"), [0, 1], [0, 0.2], 420);
  const draw = (msg) => {
    const pts = triples(arm.points());
    for (const v of [side, top]) {
      v.clear();
      polyline(v, pts, "#444");
      pts.forEach((p) => dot(v, p, "#444", 3));
      dot(v, pts[pts.length - 1], "#d60", 5);
    }
    const q = Array.from(arm.joints()).map((d) => d.toFixed(2).padStart(8)).join("");
    $("arm-info").textContent = `joints (deg) ${q}\n${msg}`;
  };
  const reachFrom = (v, keep) => (ev) => {
    const [u, w] = v.from(ev.offsetX, ev.offsetY);
    const tip = triples(arm.points()).pop();
    const goal = keep === 1 ? [u, tip[1], w] : [u, w, tip[2]];
    try {
      const it = arm.reach(...goal);
      draw(`reached (${goal.map((x) => x.toFixed(3)).join(", ")}) in ${it} iterations`);
    } catch (e) {
      draw(`unreachable: ${e}`);
    }
  };
  $("arm-side").onclick = reachFrom(side, 1);
  $("arm-top").onclick = reachFrom(top, 2);
  draw("click a view to move the arm");
}

function setupHand() {
  const lab = new HandLab(0n);
  const select = $("hand-label");
  lab.labels().forEach((name, i) => select.add(new Option(name, i)));
  const v = view($("hand"), [0, 1], [0, 1.1], 1400);
  const fingers = [[0, 1, 2, 3, 4], [0, 5, 6, 7, 8], [0, 9, 10, 11, 12], [0, 13, 14, 15, 16], [0, 17, 18, 19, 20]];
  const draw = () => {
    const pts = triples(lab.points());
    v.clear();
    // Recentre on the wrist so every sample is visible.
    const w = pts[0];
    const shifted = pts.map((p) => [p[0] - w[0], p[1] - w[1] + 1.1, p[2]]);
    fingers.forEach((f) => polyline(v, f.map((i) => shifted[i]), "#555", 2));
    shifted.forEach((p) => dot(v, p, "#333", 2.5));
    const [o, x, y, z] = triples(lab.frame());
    const os = [o[0] - w[0], o[1] - w[1] + 1.1, o[2]];
    const axis = (d, c) => polyline(v, [os, [os[0] + 0.05 * d[0], os[1] + 0.05 * d[1], 0]], c, 2);
    axis(x, "#c33");
    axis(y, "#2a7");
    axis(z, "#27c");
    const truth = lab.labels()[Number(select.value)];
    const pred = lab.predict();
    $("hand-info").textContent = `true ${truth}   predicted ${pred}   ${pred === truth ? "ok" : "MISS"}`;
  };
  $("hand-sample").onclick = () => {
    lab.sample(Number(select.value));
    draw();
  };
  lab.sample(0);
  draw();
}

function setupPlayback() {
  const v = view($("pb"), [0, 2], [-0.02, 0.2], 520);
  let pb = null;
  let timer = null;
  const draw = (i) => {
    const f = pb.frame(i);
    const pts = triples(f.slice(0, 21));
    const tile = [f[21], f[22], f[23]];
    const status = f[24];
    v.clear();
    const t = Array.from(pb.target());
    dot(v, t, "#27c3", 14);
    polyline(v, pts, "#444");
    dot(v, tile, STATUS_COLOR[status], 6);
    $("pb-info").textContent = `step ${i}/${pb.len() - 1}   tile ${STATUS[status]}   return ${f[25].toFixed(1)}`;
  };
  $("pb-load").onclick = () => {
    clearInterval(timer);
    pb = new Playback(BigInt($("pb-seed").value || 0));
    $("pb-scrub").max = pb.len() - 1;
    $("pb-scrub").value = 0;
    draw(0);
  };
  $("pb-scrub").oninput = () => pb && draw(Number($("pb-scrub").value));
  $("pb-play").onclick = () => {
    if (!pb) return;
    clearInterval(timer);
    let i = 0;
    timer = setInterval(() => {
      $("pb-scrub").value = i;
      draw(i);
      if (++i >= pb.len()) clearInterval(timer);
    }, 50);
  };
  $("pb-load").onclick();
}

await init();
$("status").textContent = "ready";
setupArm();
setupHand();
setupPlayback();
