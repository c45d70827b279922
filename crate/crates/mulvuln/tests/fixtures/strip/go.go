package main // pkg

func f() string {
	s := `raw // kept
/* kept */`
	r := '\'' // rune
	return s /* inline */ + "x"
}
