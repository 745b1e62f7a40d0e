function Count(s: seq<int>): nat {
  if |s| == 0 then 0 else (if s[0] > 0 then 1 else 0) + Count(s[1..])
}

method CountAppend(s: seq<int>, t: seq<int>)
{
  assert Count(s + t) == Count(s) + Count(t);
}
