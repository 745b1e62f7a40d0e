// Calculational proofs: each step relates two expressions with an
// operator and may carry a hint in braces that justifies the step.

lemma DistributesOverAddition(a: int, b: int, c: int)
  ensures a * (b + c) == a * b + a * c
{
  calc {
    a * (b + c);
  ==
    a * b + a * c;
  }
}

function Sum(n: nat): nat
{
  if n == 0 then 0 else n + Sum(n - 1)
}

lemma SumFormula(n: nat)
  ensures 2 * Sum(n) == n * (n + 1)
{
  if n > 0 {
    calc {
      2 * Sum(n);
    ==  // definition of Sum
      2 * (n + Sum(n - 1));
    ==
      2 * n + 2 * Sum(n - 1);
    ==  { SumFormula(n - 1); }
      2 * n + (n - 1) * n;
    ==
      n * (n + 1);
    }
  }
}

lemma MonotoneSquare(x: nat, y: nat)
  requires x <= y
  ensures x * x <= y * y
{
  calc <= {
    x * x;
  <=  { assert x * x <= x * y; }
    x * y;
  <=
    y * y;
  }
}

predicate Divides(d: nat, n: nat)
  requires d > 0
{
  n % d == 0
}

lemma DividesSum(d: nat, m: nat, n: nat)
  requires d > 0
  requires Divides(d, m) && Divides(d, n)
  ensures Divides(d, m + n)
{
  var i := m / d;
  var j := n / d;
  calc {
    m + n;
  ==  { assert m == d * i; assert n == d * j; }
    d * i + d * j;
  ==
    d * (i + j);
  }
}

lemma ImplicationChain(p: bool, q: bool, r: bool)
  requires p ==> q
  requires q ==> r
  ensures p ==> r
{
  calc ==> {
    p;
  ==>
    q;
  ==>
    r;
  }
}
