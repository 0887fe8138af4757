"""Train a small model for a few epochs, evaluate it and print the prompt and
the template explanation for the test split.

    python demos/explain_report.py
"""

from claire.harness.evaluation import evaluate
from claire.harness.synthetic import generate_synthetic
from claire.harness.training import train
from claire.harness.trends import desk_config, desk_spec
from claire.reasoning import build_prompt, explain_template


def main():
    train_set, val_set, test_set = generate_synthetic(desk_spec(seed=0, cloud_fraction=0.4, patches=60))
    model, _, _ = train(desk_config("rift", seed=0, epochs=4), train_set, val_set)
    report = evaluate(model, test_set, modality_ablation=True, per_sample=False).report
    prompt = build_prompt(report)
    print(prompt.text)
    print("\n--- template explanation ---")
    print(explain_template(prompt, report).text)


if __name__ == "__main__":
    main()
