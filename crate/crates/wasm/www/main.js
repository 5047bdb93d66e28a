import init, { compare_states, tree_complexity, patient_trace } from "./pkg/histpolicy_wasm.js";

const $ = (id) => document.getElementById(id);
const fmt = (v, digits = 3) => (v === null || v === undefined ? "NA" : Number(v).toFixed(digits));
const sci = (v) => (v === null || v === undefined ? "NA" : Number(v).toExponential(2));

function cohort() {
  const num = (id) => Number($(id).value);
  return {
    n_patients: num("n_patients"),
    n_actions: num("n_actions"),
    stages: num("stages"),
    persistence: num("persistence"),
    current: num("current"),
    aggregate: num("aggregate"),
    seed: num("seed"),
  };
}

function status(text, isError = false) {
  $("status").textContent = text;
  $("status").className = isError ? "error" : "";
}

// Runs a wasm call after the status line has had a chance to repaint.
function run(label, fn) {
  status(`${label}...`);
  setTimeout(() => {
    const t0 = performance.now();
    try {
      fn();
      status(`${label} done in ${((performance.now() - t0) / 1000).toFixed(1)} s`);
    } catch (e) {
      status(String(e.message ?? e), true);
    }
  }, 20);
}

function fillRows(table, rows) {
  const body = table.querySelector("tbody");
  body.replaceChildren(
    ...rows.map((cells) => {
      const tr = document.createElement("tr");
      for (const c of cells) {
        const td = document.createElement("td");
        td.textContent = c;
        tr.appendChild(td);
      }
      return tr;
    }),
  );
  table.hidden = false;
}

function compare() {
  const out = JSON.parse(compare_states(JSON.stringify(cohort())));
  $("oracle").textContent = `True-policy AUROC on ${out.n_test_rows} test rows: ${fmt(out.oracle_auroc)}`;
  fillRows(
    $("compare-table"),
    out.states.map((s) => [s.state, fmt(s.test_auroc), fmt(s.test_auroc_switch), sci(s.ope_median_last)]),
  );
  $("stage-chart").innerHTML = out.stage_svg;
  $("ope-chart").innerHTML = out.ope_svg;
}

function sweep() {
  const params = { ...cohort(), n_models: Number($("n_models").value), state: $("sweep-state").value };
  const out = JSON.parse(tree_complexity(JSON.stringify(params)));
  $("sweep-note").textContent = `${out.state}: largest tree has ${out.max_leaves} leaves across ${out.points.length} leaf counts`;
  $("sweep-chart").innerHTML = out.svg;
}

function trace() {
  const params = { ...cohort(), patient: Number($("patient").value) };
  const out = JSON.parse(patient_trace(JSON.stringify(params)));
  $("patient").max = out.n_test_patients - 1;
  $("trace-note").textContent = `${out.patient_id} (one of ${out.n_test_patients} test patients)`;
  fillRows(
    $("trace-table"),
    out.stages.map((s) => [
      s.stage,
      s.action,
      fmt(s.oracle),
      fmt(s.prev_action_model),
      fmt(s.history_model),
      sci(s.prev_action_product),
      sci(s.history_product),
    ]),
  );
}

await init();
$("run-compare").addEventListener("click", () => run("Comparing", compare));
$("run-sweep").addEventListener("click", () => run("Sweeping", sweep));
$("run-trace").addEventListener("click", () => run("Tracing", trace));
status("Ready.");
