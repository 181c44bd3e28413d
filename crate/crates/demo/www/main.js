import init, { preset, certify, verify, scan_point } from "./pkg/qsep_demo.js";

const $ = (id) => document.getElementById(id);
const tick = () => new Promise((r) => setTimeout(r, 0));

function loadPreset() {
  $("state").value = JSON.stringify(JSON.parse(preset($("preset").value)), null, 1);
}

function summarize(cert) {
  const box = $("summary");
  box.className = cert.verdict;
  if (cert.verdict === "separable") {
    const rows = cert.decomposition.atoms.map((a, i) =>
      `${i}: weight ${a.weight.toFixed(5)}  ` +
      a.vectors.map((v) => "(" + v.map(([re, im]) => `${re.toFixed(3)}${im < 0 ? "-" : "+"}${Math.abs(im).toFixed(3)}i`).join(", ") + ")").join(" x "));
    box.innerHTML = `<p><b>separable</b>, r = ${cert.decomposition.atoms.length}, level k = ${cert.level_k}, residual ${cert.residual.toExponential(2)}</p><pre>${rows.join("\n")}</pre>`;
  } else if (cert.verdict === "not_separable") {
    box.innerHTML = `<p><b>not separable</b> in ${cert.metadata.mode} mode: relaxation k = ${cert.level_k} is infeasible, certificate margin ${cert.margin.toExponential(2)}</p>`;
  } else {
    box.innerHTML = `<p><b>undetermined</b> up to k = ${cert.k_max_reached}</p><pre>${cert.diagnostics.join("\n")}</pre>`;
  }
}

async function runCertify() {
  $("status").textContent = "solving...";
  $("summary").innerHTML = "";
  await tick();
  const kmax = $("kmax").value === "" ? undefined : Number($("kmax").value);
  const t0 = performance.now();
  try {
    const text = certify($("state").value, $("symmetric").checked, BigInt($("seed").value || 0), kmax);
    $("cert").textContent = text;
    summarize(JSON.parse(text));
    $("status").textContent = `${((performance.now() - t0) / 1000).toFixed(2)} s`;
  } catch (e) {
    $("status").textContent = "error: " + e.message;
  }
}

function runVerify() {
  try {
    const out = JSON.parse(verify($("cert").textContent, $("state").value));
    $("verdict").className = out.ok ? out.verdict : "not_separable";
    $("verdict").textContent = out.ok
      ? `accepted (${out.verdict}, ${out.verdict === "separable" ? "residual" : "margin"} ${Number(out.value).toExponential(2)})`
      : `rejected: ${out.reason}`;
  } catch (e) {
    $("verdict").className = "";
    $("verdict").textContent = "error: " + e.message;
  }
}

async function runScan() {
  const n = Math.max(2, Number($("points").value));
  const body = $("scantable").tBodies[0];
  body.innerHTML = "";
  for (let i = 0; i < n; i++) {
    const p = i / (n - 1);
    $("scanstatus").textContent = `p = ${p.toFixed(3)}`;
    await tick();
    const t0 = performance.now();
    const row = body.insertRow();
    try {
      const r = JSON.parse(scan_point(p, 0n));
      row.className = r.verdict;
      for (const v of [p.toFixed(3), r.verdict, r.r ?? "-", r.k, (performance.now() - t0).toFixed(0)]) row.insertCell().textContent = v;
    } catch (e) {
      row.insertCell().textContent = p.toFixed(3);
      row.insertCell().textContent = e.message;
    }
  }
  $("scanstatus").textContent = "done";
}

await init();
loadPreset();
$("preset").onchange = loadPreset;
$("run").onclick = runCertify;
$("verify").onclick = runVerify;
$("scan").onclick = runScan;
