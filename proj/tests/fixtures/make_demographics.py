"""Regenerates oasis_demographics.csv: 416 subjects in the OASIS cross-sectional
column layout, with the demented cohort counts by age band and CDR fixed."""
import random

rng = random.Random(20)
# (low age, high age, CDR 0.5 count, CDR 1 count, CDR 2 count)
DEMENTED = [(60, 69, 12, 3, 0), (70, 79, 32, 15, 1), (80, 89, 22, 9, 1), (90, 96, 4, 1, 0)]

rows = []
for lo, hi, half, one, two in DEMENTED:
    for cdr, count in (("0.5", half), ("1", one), ("2", two)):
        for _ in range(count):
            mmse = {"0.5": rng.randint(22, 30), "1": rng.randint(15, 26), "2": rng.randint(10, 20)}[cdr]
            rows.append((rng.randint(lo, hi), str(mmse), cdr))
for _ in range(98):
    rows.append((rng.randint(60, 96), str(rng.randint(26, 30)), "0"))
for _ in range(218):
    rows.append((rng.randint(18, 59), "", ""))
rng.shuffle(rows)

with open("oasis_demographics.csv", "w", newline="\n") as out:
    out.write("ID,M/F,Hand,Age,Educ,SES,MMSE,CDR,eTIV,nWBV,ASF,Delay\n")
    for n, (age, mmse, cdr) in enumerate(rows, start=1):
        elderly = age >= 60
        educ = str(rng.randint(1, 5)) if elderly else ""
        ses = str(rng.randint(1, 5)) if elderly else ""
        etiv = rng.randint(1123, 1992)
        out.write(f"OAS1_{n:04d}_MR1,{rng.choice('MF')},R,{age},{educ},{ses},{mmse},{cdr},"
                  f"{etiv},{rng.uniform(0.64, 0.89):.3f},{1755.0 / etiv:.3f},N/A\n")
